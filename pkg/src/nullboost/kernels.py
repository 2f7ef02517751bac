"""Hot loops of feature extraction: normalized cross-correlation and local
spatial pooling.

Each kernel has a numba implementation (``_*_nb``) and a numpy one
(``_*_np``); the public function dispatches on :func:`nullboost._accel.use_numba`.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import njit, use_numba

POOL_KINDS = {"mean": 0, "max": 1, "l2": 2}

# ---------------------------------------------------------------------------
# normalized cross-correlation


@njit(cache=True, nogil=True)
def _ncc_nb(maps, filters, size, eps):
    n, c, h, w = maps.shape
    nf = filters.shape[0]
    ho = h - size + 1
    wo = w - size + 1
    dim = c * size * size
    out = np.empty((n, nf, ho, wo))
    win = np.empty((ho * wo, dim))
    ft = np.ascontiguousarray(filters.T)
    for e in range(n):
        # normalized windows of one image as rows, then a single BLAS product
        for i in range(ho):
            for j in range(wo):
                r = i * wo + j
                k = 0
                s = 0.0
                for ch in range(c):
                    for a in range(size):
                        for b in range(size):
                            v = maps[e, ch, i + a, j + b]
                            win[r, k] = v
                            s += v
                            k += 1
                mean = s / dim
                ss = 0.0
                for k in range(dim):
                    v = win[r, k] - mean
                    win[r, k] = v
                    ss += v * v
                inv = 1.0 / np.sqrt(ss + eps)
                for k in range(dim):
                    win[r, k] *= inv
        resp = np.dot(win, ft)
        for i in range(ho):
            for j in range(wo):
                r = i * wo + j
                for f in range(nf):
                    out[e, f, i, j] = resp[r, f]
    return out


def _ncc_np(maps, filters, size, eps, chunk=64):
    n, c, h, w = maps.shape
    ho, wo = h - size + 1, w - size + 1
    dim = c * size * size
    out = np.empty((n, filters.shape[0], ho, wo))
    for start in range(0, n, chunk):
        block = maps[start:start + chunk]
        win = sliding_window_view(block, (size, size), axis=(2, 3))
        # (m, c, ho, wo, s, s) -> (m, ho, wo, c, s, s)
        win = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, dim)
        win = win - win.mean(axis=1, keepdims=True)
        denom = np.sqrt(np.einsum("ij,ij->i", win, win) + eps)
        resp = (win @ filters.T) / denom[:, None]
        out[start:start + chunk] = resp.reshape(len(block), ho, wo, -1).transpose(0, 3, 1, 2)
    return out


def ncc(maps, filters, size, eps):
    """Valid-mode normalized cross-correlation of ``maps`` (N, C, H, W) with
    unit-norm ``filters`` (F, C*size*size). Returns (N, F, H-size+1, W-size+1)."""
    maps = np.ascontiguousarray(maps, dtype=np.float64)
    filters = np.ascontiguousarray(filters, dtype=np.float64)
    if use_numba():
        return _ncc_nb(maps, filters, int(size), float(eps))
    return _ncc_np(maps, filters, int(size), float(eps))


# ---------------------------------------------------------------------------
# local pooling


@njit(cache=True, nogil=True)
def _pool_nb(maps, size, stride, kind):
    n, f, h, w = maps.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    out = np.empty((n, f, ho, wo))
    area = size * size
    for e in range(n):
        for m in range(f):
            for i in range(ho):
                for j in range(wo):
                    r0 = i * stride
                    c0 = j * stride
                    if kind == 1:
                        acc = -np.inf
                        for a in range(size):
                            for b in range(size):
                                v = maps[e, m, r0 + a, c0 + b]
                                if v > acc:
                                    acc = v
                        out[e, m, i, j] = acc
                    else:
                        acc = 0.0
                        for a in range(size):
                            for b in range(size):
                                v = maps[e, m, r0 + a, c0 + b]
                                if kind == 2:
                                    acc += v * v
                                else:
                                    acc += v
                        if kind == 2:
                            out[e, m, i, j] = np.sqrt(acc / area)
                        else:
                            out[e, m, i, j] = acc / area
    return out


def _pool_np(maps, size, stride, kind):
    win = sliding_window_view(maps, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    if kind == 1:
        return win.max(axis=(4, 5))
    if kind == 2:
        return np.sqrt(np.mean(win * win, axis=(4, 5)))
    return win.mean(axis=(4, 5))


def pool_kernel(maps, size, stride, kind):
    maps = np.ascontiguousarray(maps, dtype=np.float64)
    code = POOL_KINDS[kind]
    if use_numba():
        return _pool_nb(maps, int(size), int(stride), code)
    return _pool_np(maps, int(size), int(stride), code)


# ---------------------------------------------------------------------------
# exact line search for the squared hinge
#
# phi(t) = 0.5 * |v + t d|_R^2 + C * sum_i max(0, a_i - t b_i)^2 is convex and
# piecewise quadratic; its derivative is piecewise linear with one breakpoint
# per example at t_i = a_i / b_i. Both versions walk the breakpoints in order
# and return the first root of phi' at t >= 0.


@njit(cache=True, nogil=True)
def _line_search_nb(a, b, vrd, drd, C):
    n = a.shape[0]
    s0 = vrd
    s1 = drd
    ts = np.empty(n)
    d0 = np.empty(n)
    d1 = np.empty(n)
    m = 0
    for i in range(n):
        if b[i] == 0.0:
            continue
        c0 = -2.0 * C * a[i] * b[i]
        c1 = 2.0 * C * b[i] * b[i]
        if a[i] > 0.0:
            s0 += c0
            s1 += c1
            if b[i] > 0.0:
                # leaves the active set at a/b
                ts[m] = a[i] / b[i]
                d0[m] = -c0
                d1[m] = -c1
                m += 1
        elif b[i] < 0.0:
            # enters the active set at a/b
            ts[m] = a[i] / b[i]
            d0[m] = c0
            d1[m] = c1
            m += 1
    order = np.argsort(ts[:m], kind="mergesort")
    t_prev = 0.0
    for j in range(m):
        k = order[j]
        if s1 > 0.0:
            root = -s0 / s1
            if root <= ts[k]:
                return max(root, t_prev)
        s0 += d0[k]
        s1 += d1[k]
        t_prev = ts[k]
    if s1 > 0.0:
        return max(-s0 / s1, t_prev)
    return t_prev


def _line_search_np(a, b, vrd, drd, C):
    nz = b != 0.0
    a, b = a[nz], b[nz]
    c0 = -2.0 * C * a * b
    c1 = 2.0 * C * b * b
    act = a > 0.0
    s0 = vrd + c0[act].sum()
    s1 = drd + c1[act].sum()
    leave = act & (b > 0.0)
    enter = ~act & (b < 0.0)
    ev = leave | enter
    ts = a[ev] / b[ev]
    sign = np.where(leave[ev], -1.0, 1.0)
    order = np.argsort(ts, kind="mergesort")
    ts = ts[order]
    s0s = s0 + np.concatenate([[0.0], np.cumsum((sign * c0[ev])[order])])
    s1s = s1 + np.concatenate([[0.0], np.cumsum((sign * c1[ev])[order])])
    lo = np.concatenate([[0.0], ts])
    hi = np.concatenate([ts, [np.inf]])
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(s1s > 0.0, -s0s / s1s, np.inf)
    ok = np.nonzero((root <= hi) & (s1s > 0.0))[0]
    if len(ok) == 0:
        return float(lo[-1])
    j = ok[0]
    return float(max(root[j], lo[j]))


def line_search(a, b, vrd, drd, C):
    """Minimiser over ``t >= 0`` of the 1-D squared-hinge objective along a
    direction, given residuals ``a = 1 - y*z``, slopes ``b = y * (X @ d)``,
    ``vrd = v' R d`` and ``drd = d' R d``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if use_numba():
        return float(_line_search_nb(a, b, float(vrd), float(drd), float(C)))
    return _line_search_np(a, b, float(vrd), float(drd), float(C))
