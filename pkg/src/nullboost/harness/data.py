"""Datasets: the expression-recognition CSV format, seeded splits, and
synthetic image tasks."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

FER_SIDE = 48


class DataError(ValueError):
    pass


class MalformedRowError(DataError):
    def __init__(self, row, reason):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class WrongPixelCountError(MalformedRowError):
    pass


class InsufficientExamplesError(DataError):
    pass


class TestSplitAccessError(RuntimeError):
    """The test partition was requested while model selection is running."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) in [0, 1]
    labels: np.ndarray | None
    class_count: int
    partition: dict = field(default_factory=dict)  # name -> index array
    _test_locked: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise DataError(f"images must be (N, H, W), got {self.images.shape}")
        if not np.all(np.isfinite(self.images)):
            raise DataError("images contain NaN or inf")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.images),):
                raise DataError("one label per image required")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
                raise DataError("labels out of range")
        seen = set()
        for name, idx in self.partition.items():
            s = set(np.asarray(idx).tolist())
            if s & seen:
                raise DataError(f"partition {name!r} overlaps another")
            seen |= s

    def __len__(self):
        return len(self.images)

    def lock_test(self):
        self._test_locked = True

    def unlock_test(self):
        self._test_locked = False

    def indices(self, name):
        if name == "test" and self._test_locked:
            raise TestSplitAccessError("test split is not accessible during model selection")
        return np.asarray(self.partition[name])

    def subset(self, name):
        """``(images, labels)`` of a named partition."""
        idx = self.indices(name)
        labels = self.labels[idx] if self.labels is not None else None
        return self.images[idx], labels


def load_expression_csv(path, side=FER_SIDE, class_count=7):
    """Read the competition layout: header with ``pixels`` and optionally
    ``emotion``; pixels are side*side space-separated integers 0-255."""
    images, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "pixels" not in header:
            raise MalformedRowError(0, "header lacks a 'pixels' column")
        pix_col = header.index("pixels")
        lab_col = header.index("emotion") if "emotion" in header else None
        for row_no, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) < len(header):
                raise MalformedRowError(row_no, f"expected {len(header)} fields, got {len(row)}")
            try:
                px = np.array(row[pix_col].split(), dtype=np.int64)
            except ValueError:
                raise MalformedRowError(row_no, "non-integer pixel value") from None
            if px.size != side * side:
                raise WrongPixelCountError(row_no, f"expected {side * side} pixels, got {px.size}")
            if px.min() < 0 or px.max() > 255:
                raise MalformedRowError(row_no, "pixel value outside 0-255")
            images.append(px.reshape(side, side) / 255.0)
            if lab_col is not None:
                try:
                    lab = int(row[lab_col])
                except ValueError:
                    raise MalformedRowError(row_no, f"bad label {row[lab_col]!r}") from None
                if not 0 <= lab < class_count:
                    raise MalformedRowError(row_no, f"label {lab} outside 0..{class_count - 1}")
                labels.append(lab)
    imgs = np.array(images).reshape(-1, side, side)
    return Dataset(imgs, np.array(labels) if lab_col is not None else None, class_count)


def write_expression_csv(dataset, path):
    """Inverse of :func:`load_expression_csv` (pixels are quantised to 0-255)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        has_labels = dataset.labels is not None
        w.writerow(["emotion", "pixels"] if has_labels else ["pixels"])
        for i, img in enumerate(dataset.images):
            px = " ".join(str(v) for v in np.rint(img * 255).astype(int).ravel())
            w.writerow([int(dataset.labels[i]), px] if has_labels else [px])


def split(dataset, n_fit, n_valid, seed=0):
    """Seeded shuffle, then the first ``n_fit`` indices go to ``fit`` and the
    next ``n_valid`` to ``valid``; the rest stay unassigned."""
    n = len(dataset)
    if n_fit < 1 or n_valid < 1 or n_fit + n_valid > n:
        raise InsufficientExamplesError(f"cannot take {n_fit} + {n_valid} examples from {n}")
    perm = np.random.default_rng(seed).permutation(n)
    partition = dict(dataset.partition)
    partition["fit"] = np.sort(perm[:n_fit])
    partition["valid"] = np.sort(perm[n_fit:n_fit + n_valid])
    partition.pop("test", None)
    return replace(dataset, partition=partition)


# ---------------------------------------------------------------------------
# synthetic tasks

GENERATORS = ("blobs", "oriented-textures", "two-view")


def make_synthetic(spec, seed=0):
    """Deterministic labelled image set.

    ``spec`` keys: ``n``, ``side``, ``class_count``, ``generator``, plus
    optional ``noise``. Labels are assigned round-robin then shuffled, so
    every class gets ``n // class_count`` or one more examples.
    """
    n = int(spec["n"])
    side = int(spec.get("side", 16))
    k = int(spec.get("class_count", 2))
    gen = spec.get("generator", "blobs")
    noise = float(spec.get("noise", 0.05))
    if n < k:
        raise DataError(f"need at least one example per class ({n} < {k})")
    if gen not in GENERATORS:
        raise DataError(f"unknown generator {gen!r}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    imgs = np.empty((n, side, side))
    if gen == "blobs":
        angles = 2 * np.pi * np.arange(k) / k
        r = side / 4
        centres = np.stack([side / 2 - 0.5 + r * np.sin(angles), side / 2 - 0.5 + r * np.cos(angles)], axis=1)
        width = side / 8
        for i, c in enumerate(labels):
            cy, cx = centres[c] + rng.normal(0, side / 32, size=2)
            imgs[i] = 0.2 + 0.6 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    elif gen == "oriented-textures":
        freq = 2 * np.pi / 4.0
        for i, c in enumerate(labels):
            th = np.pi * c / k
            phase = rng.uniform(0, 2 * np.pi)
            imgs[i] = 0.5 + 0.3 * np.sin(freq * (xx * np.cos(th) + yy * np.sin(th)) + phase)
    else:
        if k != 4:
            raise DataError("two-view generator needs class_count = 4")
        # label = 2 * ramp_bit + stripe_bit; the ramp direction survives
        # 2x bilinear downsampling but is invisible to sign-blind energy
        # features, the Nyquist stripes are the other way round
        ramp = (xx - (side - 1) / 2) / ((side - 1) / 2)
        rows = np.where(yy.astype(int) % 2 == 0, 1.0, -1.0)
        cols = np.where(xx.astype(int) % 2 == 0, 1.0, -1.0)
        for i, c in enumerate(labels):
            ramp_bit, stripe_bit = divmod(int(c), 2)
            a_r = rng.uniform(0.1, 0.25) * (1.0 if ramp_bit else -1.0)
            a_s = rng.uniform(0.08, 0.2) * rng.choice([-1.0, 1.0])
            imgs[i] = 0.5 + a_r * ramp + a_s * (cols if stripe_bit else rows)
    imgs += rng.normal(0, noise, size=imgs.shape)
    np.clip(imgs, 0.0, 1.0, out=imgs)
    return Dataset(imgs, labels, k)
