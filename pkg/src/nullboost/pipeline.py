"""Random-filter feature extractor.

An image goes through: bilinear rescale to a square side, an optional fixed
affine warp, one to three layers of (normalized cross-correlation with a
random filter bank, local pooling), and a signed or unsigned histogram
readout over a g x g grid of cells. Filters are drawn once per configuration
from the fit split only.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, ndimage

from . import kernels

logger = logging.getLogger(__name__)

FEATURE_CAP = 9000
FILTER_METHODS = ("gaussian", "pca", "patch")
CACHE_ENV = "NULLBOOST_CACHE_DIR"
_CHUNK = 256
_PATCH_IMAGES = 200
_MIN_PATCHES = 100


class DegenerateConfigError(ValueError):
    """The configuration collapses somewhere in the pipeline."""

    def __init__(self, stage, reason):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


class InsufficientPatchesError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class LayerConfig:
    n_filters: int
    filter_size: int
    method: str = "gaussian"
    pca_rank: int | None = None
    eps: float = 1e-3
    pool_size: int = 2
    pool_stride: int = 2
    pool_kind: str = "l2"

    def __post_init__(self):
        if self.n_filters < 1 or self.filter_size < 1 or self.pool_size < 1 or self.pool_stride < 1:
            raise ValueError("layer sizes must be positive")
        if self.filter_size % 2 == 0:
            raise ValueError(f"filter size must be odd, got {self.filter_size}")
        if self.pool_stride > self.pool_size:
            raise ValueError("pool stride must not exceed pool size")
        if not self.eps > 0:
            raise ValueError("norm epsilon must be positive")
        if self.method not in FILTER_METHODS:
            raise ValueError(f"unknown filter method {self.method!r}")
        if (self.pca_rank is not None) != (self.method == "pca"):
            raise ValueError("pca_rank is required for, and only for, the pca method")
        if self.pool_kind not in kernels.POOL_KINDS:
            raise ValueError(f"unknown pool kind {self.pool_kind!r}")


@dataclass(frozen=True)
class WarpConfig:
    rotation: float = 0.0  # degrees, sampled from [-rotation, rotation]
    scale: float = 0.0  # scale factor sampled from [1 - scale, 1 + scale]
    translation: float = 0.0  # pixels, each axis from [-translation, translation]


@dataclass(frozen=True)
class PipelineConfig:
    resolution: int
    layers: tuple
    signed: bool = True
    grid: int = 2
    warp: WarpConfig | None = None

    @property
    def depth(self):
        return len(self.layers)

    def key(self):
        return hashlib.sha1(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_assignments(cls, values):
        """Build from a search-space assignment (``l1_nfilters``, ``depth`` ...)."""
        depth = int(values.get("depth", 1))
        layers = []
        for k in range(1, depth + 1):
            p = f"l{k}_"
            method = values.get(p + "method", "gaussian")
            size = int(values[p + "pool_size"])
            layers.append(LayerConfig(
                n_filters=int(values[p + "nfilters"]),
                filter_size=int(values[p + "fsize"]),
                method=method,
                pca_rank=int(values[p + "pca_rank"]) if method == "pca" else None,
                eps=float(values.get(p + "eps", 1e-3)),
                pool_size=size,
                pool_stride=min(int(values.get(p + "pool_stride", size)), size),
                pool_kind=values.get(p + "pool_kind", "l2"),
            ))
        warp = None
        if values.get("warp", "off") == "on":
            warp = WarpConfig(float(values.get("warp_rotation", 0.0)), float(values.get("warp_scale", 0.0)),
                              float(values.get("warp_translation", 0.0)))
        return cls(int(values["resolution"]), tuple(layers), bool(values.get("readout_signed", True)),
                   int(values.get("readout_grid", 1)), warp)


def feature_length(config, cap=FEATURE_CAP):
    """Output width of ``config``, from geometry alone.

    Raises :class:`DegenerateConfigError` when any stage collapses or the
    width exceeds ``cap``. No pixel work is done.
    """
    side = config.resolution
    if side < 1:
        raise DegenerateConfigError("rescale", f"resolution {side} < 1")
    for k, layer in enumerate(config.layers, 1):
        if layer.filter_size > side:
            raise DegenerateConfigError(f"layer{k}.ncc", f"filter size {layer.filter_size} exceeds side {side}")
        side = side - layer.filter_size + 1
        if layer.pool_size > side:
            raise DegenerateConfigError(f"layer{k}.pool", f"pool size {layer.pool_size} exceeds side {side}")
        side = (side - layer.pool_size) // layer.pool_stride + 1
    if config.grid > side:
        raise DegenerateConfigError("readout", f"grid {config.grid} exceeds side {side}")
    n = config.layers[-1].n_filters * config.grid ** 2 * (2 if config.signed else 1)
    if n > cap:
        raise DegenerateConfigError("readout", f"cap exceeded: {n} features > {cap}")
    return n


# ---------------------------------------------------------------------------
# image operations


def _interp_matrix(n_in, n_out):
    # pixel-centre convention: output centre j maps to input (j + .5) * n_in / n_out - .5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def rescale(img, side):
    """Bilinear resample of an (H, W) image, or an (N, H, W) stack, to side x side."""
    if side < 1:
        raise ValueError("side must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if (h, w) == (side, side):
        return img.copy()
    ry, rx = _interp_matrix(h, side), _interp_matrix(w, side)
    return np.einsum("ih,...hw,jw->...ij", ry, img, rx)


def _snap(a, tol=1e-9):
    r = np.round(a)
    return np.where(np.abs(a - r) < tol, r, a)


def affine_warp(img, rotation=0.0, scale=1.0, translation=(0.0, 0.0)):
    """Rotate (degrees), scale and translate ``(dx, dy)`` an image about its
    centre. Samples falling outside are filled with the image mean."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    theta = np.deg2rad(rotation)
    cos, sin = np.cos(theta), np.sin(theta)
    # forward map: p_out = s R (p_in - c) + c + t  ->  invert for the sampler
    inv = np.array([[cos, sin], [-sin, cos]]) / scale  # acts on (y, x)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dx, dy = translation
    offset = np.array([cy, cx]) - inv @ np.array([cy + dy, cx + dx])
    # snap round-off (e.g. sin(2*pi)) so border samples of exact maps stay in bounds
    inv, offset = _snap(inv), _snap(offset)
    return ndimage.affine_transform(img, inv, offset=offset, order=1, mode="constant", cval=float(img.mean()),
                                    prefilter=False)


# ---------------------------------------------------------------------------
# filters


@dataclass(frozen=True)
class FilterBank:
    filters: np.ndarray  # (count, channels * size * size), unit rows
    size: int
    channels: int


def _unit_rows(m, rng):
    norms = np.linalg.norm(m, axis=1)
    bad = norms < 1e-12
    if np.any(bad):
        m[bad] = rng.standard_normal((int(bad.sum()), m.shape[1]))
        norms[bad] = np.linalg.norm(m[bad], axis=1)
    return m / norms[:, None]


def build_filters(method, count, size, channels, rng, patches=None, pca_rank=None):
    """Draw ``count`` unit-norm filters of shape (channels, size, size).

    ``gaussian`` ignores ``patches``; ``patch`` takes random +-1 combinations
    of two sampled patches; ``pca`` takes random Gaussian combinations of the
    top ``pca_rank`` principal components of the mean-centred patches.
    """
    dim = channels * size * size
    if method == "gaussian":
        return FilterBank(_unit_rows(rng.standard_normal((count, dim)), rng), size, channels)
    if method not in ("pca", "patch"):
        raise ValueError(f"unknown filter method {method!r}")
    need = max(count, pca_rank or 0, _MIN_PATCHES)
    if patches is None or len(patches) < need:
        have = 0 if patches is None else len(patches)
        raise InsufficientPatchesError(f"{method} filters need {need} patches, have {have}")
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[1] != dim:
        raise ValueError(f"patches have dimension {patches.shape[1]}, expected {dim}")
    if method == "patch":
        idx = rng.integers(len(patches), size=(count, 2))
        signs = rng.choice([-1.0, 1.0], size=(count, 2))
        m = signs[:, :1] * patches[idx[:, 0]] + signs[:, 1:] * patches[idx[:, 1]]
        return FilterBank(_unit_rows(m, rng), size, channels)
    rank = min(int(pca_rank), dim)
    centred = patches - patches.mean(axis=0)
    try:
        _, _, vt = linalg.svd(centred, full_matrices=False, lapack_driver="gesdd")
    except linalg.LinAlgError:
        # divide-and-conquer occasionally fails on rank-deficient inputs
        _, _, vt = linalg.svd(centred, full_matrices=False, lapack_driver="gesvd")
    comps = vt[:rank]
    m = rng.standard_normal((count, rank)) @ comps
    return FilterBank(_unit_rows(m, rng), size, channels)


def sample_patches(maps, size, n, rng):
    """``n`` random (C, size, size) windows of an (N, C, H, W) stack, flattened."""
    num, c, h, w = maps.shape
    avail = num * (h - size + 1) * (w - size + 1)
    n = min(n, avail)
    flat = rng.choice(avail, size=n, replace=False) if avail <= 4 * n else rng.integers(avail, size=n)
    e, rest = np.divmod(flat, (h - size + 1) * (w - size + 1))
    i, j = np.divmod(rest, w - size + 1)
    out = np.empty((n, c * size * size))
    for r in range(n):
        out[r] = maps[e[r], :, i[r]:i[r] + size, j[r]:j[r] + size].ravel()
    return out


# ---------------------------------------------------------------------------
# layers


def ncc_layer(maps, bank, eps):
    """Normalized cross-correlation of (C, H, W) or (N, C, H, W) maps."""
    single = np.ndim(maps) == 3
    x = np.asarray(maps, dtype=np.float64)
    if single:
        x = x[None]
    h, w = x.shape[-2:]
    if bank.size > h or bank.size > w:
        raise DegenerateConfigError("ncc", f"filter size {bank.size} exceeds map {h}x{w}")
    if x.shape[1] != bank.channels:
        raise ValueError(f"maps have {x.shape[1]} channels, filters expect {bank.channels}")
    out = kernels.ncc(x, bank.filters, bank.size, eps)
    return out[0] if single else out


def pool(maps, size, stride, kind="l2"):
    """Strided window reduction (``mean``, ``max`` or root-mean-square ``l2``)."""
    single = np.ndim(maps) == 3
    x = np.asarray(maps, dtype=np.float64)
    if single:
        x = x[None]
    h, w = x.shape[-2:]
    if size > h or size > w:
        raise DegenerateConfigError("pool", f"pool size {size} exceeds map {h}x{w}")
    out = kernels.pool_kernel(x, size, stride, kind)
    return out[0] if single else out


def _cell_edges(n, g):
    return [(n * k) // g for k in range(g + 1)]


def dihist_readout(maps, grid, signed=True):
    """Per-cell sums over a grid x grid partition of each map.

    Unsigned: sum of |v|. Signed: positive-part sums followed by negative-part
    sums, so the output is ``[pos | neg]``, each block (maps, cell) ordered.
    """
    single = np.ndim(maps) == 3
    x = np.asarray(maps, dtype=np.float64)
    if single:
        x = x[None]
    n, f, h, w = x.shape
    if grid < 1 or grid > h or grid > w:
        raise DegenerateConfigError("readout", f"grid {grid} does not fit map {h}x{w}")
    ye, xe = _cell_edges(h, grid), _cell_edges(w, grid)
    parts = [np.maximum(x, 0.0), np.maximum(-x, 0.0)] if signed else [np.abs(x)]
    blocks = []
    for part in parts:
        cells = np.empty((n, f, grid, grid))
        for a in range(grid):
            for b in range(grid):
                cells[:, :, a, b] = part[:, :, ye[a]:ye[a + 1], xe[b]:xe[b + 1]].sum(axis=(2, 3))
        blocks.append(cells.reshape(n, -1))
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# composition


@dataclass
class FittedPipeline:
    """A configuration with its filters and warp drawn; maps images to features."""

    config: PipelineConfig
    banks: list
    warp: tuple | None = None  # (rotation, scale, dx, dy)
    n_features: int = 0

    def _front(self, images):
        x = rescale(images, self.config.resolution)
        if self.warp is not None:
            rot, sc, dx, dy = self.warp
            x = np.stack([affine_warp(im, rot, sc, (dx, dy)) for im in x])
        return x[:, None]

    def _layer(self, k, maps):
        layer = self.config.layers[k]
        out = ncc_layer(maps, self.banks[k], layer.eps)
        return pool(out, layer.pool_size, layer.pool_stride, layer.pool_kind)

    def transform(self, images):
        images = np.asarray(images, dtype=np.float64)
        out = np.empty((len(images), self.n_features))
        for start in range(0, len(images), _CHUNK):
            maps = self._front(images[start:start + _CHUNK])
            for k in range(self.config.depth):
                maps = self._layer(k, maps)
            out[start:start + _CHUNK] = dihist_readout(maps, self.config.grid, self.config.signed)
        return out

    def to_arrays(self):
        d = {f"filters_{k}": b.filters for k, b in enumerate(self.banks)}
        d["warp"] = np.array(self.warp if self.warp is not None else [], dtype=float)
        return d

    @classmethod
    def from_arrays(cls, config, arrays):
        banks = []
        channels = 1
        for k, layer in enumerate(config.layers):
            banks.append(FilterBank(np.asarray(arrays[f"filters_{k}"]), layer.filter_size, channels))
            channels = layer.n_filters
        warp = tuple(float(v) for v in arrays["warp"]) or None
        return cls(config, banks, warp, feature_length(config, cap=np.inf))


def fit_pipeline(config, fit_images, rng, cap=FEATURE_CAP):
    """Check geometry, draw the warp and filters (from ``fit_images`` only)."""
    n_features = feature_length(config, cap)
    warp = None
    if config.warp is not None:
        w = config.warp
        warp = (float(rng.uniform(-w.rotation, w.rotation)), float(rng.uniform(1 - w.scale, 1 + w.scale)),
                float(rng.uniform(-w.translation, w.translation)), float(rng.uniform(-w.translation, w.translation)))
    fitted = FittedPipeline(config, [], warp, n_features)
    needs_data = any(layer.method != "gaussian" for layer in config.layers)
    maps = None
    if needs_data:
        fit_images = np.asarray(fit_images, dtype=np.float64)
        pick = rng.permutation(len(fit_images))[:_PATCH_IMAGES]
        maps = fitted._front(fit_images[np.sort(pick)])
    channels = 1
    for k, layer in enumerate(config.layers):
        patches = None
        if layer.method != "gaussian":
            want = max(1000, 2 * layer.n_filters, 2 * (layer.pca_rank or 0))
            patches = sample_patches(maps, layer.filter_size, want, rng)
        bank = build_filters(layer.method, layer.n_filters, layer.filter_size, channels, rng, patches,
                             layer.pca_rank)
        fitted.banks.append(bank)
        channels = layer.n_filters
        if maps is not None and k + 1 < config.depth and any(
                later.method != "gaussian" for later in config.layers[k + 1:]):
            maps = fitted._layer(k, maps)
    return fitted


def extract_features(images, config, rng, fit_images=None, cap=FEATURE_CAP):
    """Features for ``images`` under ``config``; filters come from ``fit_images``
    (defaults to ``images``)."""
    fitted = fit_pipeline(config, images if fit_images is None else fit_images, rng, cap)
    return fitted.transform(images)


# ---------------------------------------------------------------------------
# on-disk feature cache


class FeatureCache:
    """Feature matrices keyed by (config, seed, split); a no-op without a directory."""

    VERSION = 1

    def __init__(self, root=None):
        root = root if root is not None else os.environ.get(CACHE_ENV)
        self.root = Path(root) if root else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, config, seed, split):
        return self.root / f"v{self.VERSION}-{config.key()}-{seed}-{split}.npy"

    def get(self, config, seed, split):
        if self.root is None:
            return None
        p = self._path(config, seed, split)
        return np.load(p) if p.exists() else None

    def put(self, config, seed, split, features):
        if self.root is None:
            return
        p = self._path(config, seed, split)
        tmp = p.with_suffix(".tmp.npy")
        np.save(tmp, features)
        os.replace(tmp, p)
