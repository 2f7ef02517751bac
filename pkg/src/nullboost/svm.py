"""One-vs-rest linear L2-SVM with optional frozen carry-forward margins.

For class ``c`` with targets ``y_ic`` in {-1, +1} the model minimises::

    0.5 * |w_c|^2 + 0.5 * alpha_c^2 + C * sum_i max(0, 1 - y_ic * m_ic)^2
    m_ic = w_c . x_i + b_c + alpha_c * frozen_ic

where ``x_i`` is the standardised feature row and the bias is unregularised.
Without frozen margins the alpha terms are dropped.

Each binary problem is solved in the primal by a finite Newton method: on the
current active set (examples with positive hinge) the objective is an exact
quadratic, so the Newton direction is solved for (directly for small blocks,
by preconditioned CG otherwise) and followed by an exact line search over the
hinge breakpoints. The objective is non-increasing at every iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .kernels import line_search

FORMAT_VERSION = 1


class DimensionMismatchError(ValueError):
    pass


class NonFiniteInputError(ValueError):
    pass


@dataclass
class SvmModel:
    weights: np.ndarray  # (classes, features), in standardised units
    bias: np.ndarray
    alpha: np.ndarray | None
    C: float
    mean: np.ndarray
    scale: np.ndarray
    n_iter: list = field(default_factory=list, compare=False)
    objective: list = field(default_factory=list, compare=False)
    traces: list = field(default_factory=list, repr=False, compare=False)

    @property
    def class_count(self):
        return self.weights.shape[0]

    @property
    def n_features(self):
        return self.weights.shape[1]

    def raw_weights(self):
        """Weights and bias acting on unstandardised features."""
        w = self.weights / self.scale
        b = self.bias - w @ self.mean
        return w, b


def _check_features(features, n_features=None):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError(f"features must be 2-D, got shape {x.shape}")
    if n_features is not None and x.shape[1] != n_features:
        raise DimensionMismatchError(f"expected {n_features} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("features contain NaN or inf")
    return x


def _check_frozen(frozen, n, k):
    if frozen is None:
        return None
    f = np.asarray(frozen, dtype=np.float64)
    if f.shape != (n, k):
        raise DimensionMismatchError(f"frozen margins must have shape {(n, k)}, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise NonFiniteInputError("frozen margins contain NaN or inf")
    return f


def standardization(features):
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


DIRECT_MAX = 400


class _Design:
    """Column blocks ``[xs | extra]`` without materialising the concatenation."""

    def __init__(self, xs, extra):
        self.xs, self.extra = xs, extra
        self.d = xs.shape[1]
        self.width = self.d + extra.shape[1]

    def dot(self, v):
        return self.xs @ v[:self.d] + self.extra @ v[self.d:]

    def tdot(self, r):
        return np.concatenate([self.xs.T @ r, self.extra.T @ r])

    def gram(self, rows):
        xs, ex = self.xs[rows], self.extra[rows]
        top = np.hstack([xs.T @ xs, xs.T @ ex])
        bottom = np.hstack([ex.T @ xs, ex.T @ ex])
        return np.vstack([top, bottom])


def class_objective(v, design, y, reg, C):
    a = np.maximum(1.0 - y * design.dot(v), 0.0)
    return 0.5 * float(np.dot(reg * v, v)) + C * float(np.dot(a, a))


def _newton(design, y, reg, C, v, tol, max_iter):
    # zero-reg coordinates get a unit diagonal when no example is active, where
    # their gradient is zero anyway
    trace = [class_objective(v, design, y, reg, C)]
    for _ in range(max_iter):
        a = 1.0 - y * design.dot(v)
        act = a > 0.0
        g = reg * v - 2.0 * C * design.tdot(np.where(act, y * a, 0.0))
        if not np.any(g):
            break
        fix = (reg == 0.0) & (not np.any(act))
        if design.width <= DIRECT_MAX:
            h = 2.0 * C * design.gram(act)
            h[np.diag_indices_from(h)] += reg + fix
            d = np.linalg.solve(h, -g)
        else:
            diag = reg + fix + 2.0 * C * np.concatenate([
                np.einsum("ij,ij->j", design.xs[act], design.xs[act]),
                np.einsum("ij,ij->j", design.extra[act], design.extra[act]),
            ])
            mask = act.astype(float)
            op = LinearOperator(
                (design.width, design.width),
                matvec=lambda u: (reg + fix) * u + 2.0 * C * design.tdot(mask * design.dot(u)),
                dtype=np.float64,
            )
            pre = LinearOperator((design.width, design.width), matvec=lambda u: u / diag, dtype=np.float64)
            d, _ = cg(op, -g, rtol=1e-10, atol=0.0, maxiter=10 * design.width, M=pre)
        if np.dot(g, d) >= 0.0:
            break
        slope = y * design.dot(d)
        t = line_search(a, slope, np.dot(reg * v, d), np.dot(reg * d, d), C)
        if t <= 0.0:
            break
        v_new = v + t * d
        f_new = class_objective(v_new, design, y, reg, C)
        if f_new > trace[-1]:
            # round-off at the optimum; keep the better point
            break
        v = v_new
        trace.append(f_new)
        if trace[-2] - f_new <= tol * max(abs(f_new), 1e-300):
            break
    return v, trace


def fit(features, labels, C, frozen=None, class_count=None, *, tol=1e-6, max_iter=1000,
        standardize=True, init=None):
    """Train a one-vs-rest squared-hinge SVM.

    ``init`` warm-starts from another model on the same features (used when
    sweeping C). Stops once a Newton iteration lowers the objective by less
    than ``tol`` relative, or after ``max_iter`` iterations.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    x = _check_features(features)
    labels = np.asarray(labels)
    n = x.shape[0]
    if labels.shape != (n,):
        raise DimensionMismatchError(f"{n} feature rows but labels have shape {labels.shape}")
    k = int(class_count if class_count is not None else labels.max() + 1)
    if k < 2:
        raise ValueError("need at least two classes")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels out of range")
    frozen = _check_frozen(frozen, n, k)

    if standardize:
        mean, scale = standardization(x)
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    xs = (x - mean) / scale
    d = x.shape[1]

    reg = np.ones(d + (frozen is not None) + 1)
    reg[-1] = 0.0
    weights = np.zeros((k, d))
    bias = np.zeros(k)
    alpha = np.zeros(k) if frozen is not None else None
    model = SvmModel(weights, bias, alpha, float(C), mean, scale)
    ones = np.ones((n, 1))
    for c in range(k):
        y = np.where(labels == c, 1.0, -1.0)
        extra = ones if frozen is None else np.column_stack([frozen[:, c], ones])
        design = _Design(xs, extra)
        v = np.zeros(design.width)
        if init is not None:
            v[:d] = init.weights[c]
            if frozen is not None and init.alpha is not None:
                v[d] = init.alpha[c]
            v[-1] = init.bias[c]
        v, trace = _newton(design, y, reg, C, v, tol, max_iter)
        weights[c] = v[:d]
        if frozen is not None:
            alpha[c] = v[d]
        bias[c] = v[-1]
        model.n_iter.append(len(trace) - 1)
        model.objective.append(trace[-1])
        model.traces.append(trace)
    return model


def margins(model, features, frozen=None):
    """Per-example, per-class decision values ``m_ic``."""
    x = _check_features(features, model.n_features)
    if (frozen is None) != (model.alpha is None):
        raise DimensionMismatchError("frozen margins must be given iff the model was fit with them")
    frozen = _check_frozen(frozen, x.shape[0], model.class_count)
    m = ((x - model.mean) / model.scale) @ model.weights.T + model.bias
    if frozen is not None:
        m = m + model.alpha * frozen
    return m


def predict(model, features, frozen=None):
    """Argmax class per example; ties go to the lowest class index."""
    return np.argmax(margins(model, features, frozen), axis=1)


def zero_one_loss(predictions, labels):
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise DimensionMismatchError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        return 0.0
    return float(np.mean(p != y))


def accuracy(predictions, labels):
    return 1.0 - zero_one_loss(predictions, labels)


def total_objective(model, features, labels, frozen=None):
    """Sum of the per-class objectives of ``model`` on the given data."""
    xs = (_check_features(features, model.n_features) - model.mean) / model.scale
    labels = np.asarray(labels)
    ones = np.ones((xs.shape[0], 1))
    total = 0.0
    for c in range(model.class_count):
        y = np.where(labels == c, 1.0, -1.0)
        if frozen is None:
            extra, v = ones, np.concatenate([model.weights[c], [model.bias[c]]])
        else:
            extra = np.column_stack([np.asarray(frozen)[:, c], ones])
            v = np.concatenate([model.weights[c], [model.alpha[c], model.bias[c]]])
        reg = np.ones(len(v))
        reg[-1] = 0.0
        total += class_objective(v, _Design(xs, extra), y, reg, model.C)
    return total


# ---------------------------------------------------------------------------
# persistence


def save_model(model, path):
    np.savez(
        path,
        version=FORMAT_VERSION,
        class_count=model.class_count,
        weights=model.weights,
        bias=model.bias,
        alpha=model.alpha if model.alpha is not None else np.empty(0),
        has_alpha=model.alpha is not None,
        C=model.C,
        mean=model.mean,
        scale=model.scale,
    )


def load_model(path):
    with np.load(path) as z:
        if int(z["version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {int(z['version'])}")
        alpha = z["alpha"].copy() if bool(z["has_alpha"]) else None
        return SvmModel(z["weights"].copy(), z["bias"].copy(), alpha, float(z["C"]),
                        z["mean"].copy(), z["scale"].copy())
