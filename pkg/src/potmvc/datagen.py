"""Synthetic imbalanced multi-view data: generation, imbalance utilities,
and the on-disk dataset directory format.

A dataset directory contains one delimited text file per view
(``view_0.csv`` ...), a ``labels.csv`` with one integer class id per line,
and a ``meta`` file with ``key=value`` lines (classes, views, samples, dims,
seed, ratio). All numeric text is UTF-8, comma-delimited with ``\\n`` line
ends, and floats carry at most 9 significant digits; generated feature
values are pre-rounded to that precision so save/load round-trips are
bit-exact.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .mathops import substream


@dataclass
class MultiViewDataset:
    views: list
    labels: np.ndarray
    n_classes: int
    seed: int | None = None
    ratio: float | None = None

    @property
    def n_views(self):
        return len(self.views)

    @property
    def n_samples(self):
        return len(self.labels)

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def validate(self):
        n = self.n_samples
        for v, x in enumerate(self.views):
            if x.ndim != 2 or x.shape[0] != n:
                raise ValueError(f"view {v} has {x.shape[0]} rows, "
                                 f"expected {n}")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of range")
        return self


@dataclass
class GenSpec:
    classes: int
    views: int
    samples: int
    ratio: float
    view_dims: tuple = (12, 10, 8)
    latent_dim: int = 8
    separation: float = 4.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.view_dims = tuple(int(d) for d in self.view_dims)
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must lie in (0, 1]")
        if self.samples < self.classes:
            raise ValueError("need at least one sample per class")
        if len(self.view_dims) != self.views:
            raise ValueError(f"need {self.views} view dims, "
                             f"got {len(self.view_dims)}")


def class_sizes(n_samples, n_classes, ratio):
    """Integer class sizes on a geometric profile from largest to smallest.

    Sizes follow n_max * ratio**(k/(K-1)) scaled so they sum to n_samples
    (remainder absorbed by the largest class); the achieved min/max ratio
    must land within 0.02 of the requested one or the instance is rejected
    as infeasible.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    k = n_classes
    if k == 1:
        return np.array([n_samples], dtype=np.int64)
    decay = np.array([ratio ** (i / (k - 1)) for i in range(k)])
    n_max = n_samples / decay.sum()
    sizes = np.rint(n_max * decay).astype(np.int64)
    remainder = n_samples - sizes.sum()
    if remainder > 0:
        sizes[:remainder] += 1
    elif remainder < 0:
        sizes[remainder:] -= 1
    # integer rounding can push min/max off target; repair by shifting single
    # samples between the extreme classes while the sum stays fixed
    for _ in range(k + 2):
        if sizes.min() < 1 or np.any(np.diff(sizes) > 0):
            break
        achieved = sizes.min() / sizes.max()
        if abs(achieved - ratio) <= 0.02:
            return sizes
        if achieved < ratio:
            sizes[0] -= 1
            sizes[-1] += 1
        else:
            sizes[0] += 1
            sizes[-1] -= 1
    raise ValueError(
        f"{n_samples} samples cannot realize ratio {ratio} over "
        f"{n_classes} classes within 0.02; increase the sample count")


def imbalance_ratio(labels):
    """Smallest observed class count divided by the largest."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label vector")
    counts = np.bincount(labels.astype(np.int64))
    counts = counts[counts > 0]
    return float(counts.min() / counts.max())


def _round_sig9(x):
    """Quantize to 9 significant decimal digits (exact text round-trip).

    Goes through the same %.9g formatting used when writing files, so the
    returned doubles reproduce bit-for-bit after a save/load cycle.
    """
    a = np.asarray(x, dtype=np.float64)
    return np.char.mod("%.9g", a).astype(np.float64)


def generate(spec):
    """Sample an imbalanced multi-view Gaussian-mixture dataset.

    Class centroids live in a shared latent space; each view observes them
    through its own fixed random linear map plus Gaussian noise. Labels are
    identical across views and the draw is a pure function of the seed.
    """
    counts = class_sizes(spec.samples, spec.classes, spec.ratio)
    centroids = spec.separation * substream(spec.seed, "centroids").normal(
        size=(spec.classes, spec.latent_dim))
    labels = np.repeat(np.arange(spec.classes), counts)
    labels = labels[substream(spec.seed, "shuffle").permutation(spec.samples)]
    views = []
    for v, dim in enumerate(spec.view_dims):
        w = substream(spec.seed, f"viewmap:{v}").normal(
            size=(spec.latent_dim, dim)) / math.sqrt(spec.latent_dim)
        x = centroids[labels] @ w
        if spec.noise_std > 0:
            x = x + spec.noise_std * substream(spec.seed, f"noise:{v}").normal(
                size=x.shape)
        views.append(_round_sig9(x))
    return MultiViewDataset(views=views, labels=labels.astype(np.int64),
                            n_classes=spec.classes, seed=spec.seed,
                            ratio=spec.ratio).validate()


def save_dataset(ds, path):
    """Write a dataset directory (see module docstring for the format)."""
    ds.validate()
    os.makedirs(path, exist_ok=True)
    for v, x in enumerate(ds.views):
        _write_matrix(os.path.join(path, f"view_{v}.csv"), x)
    with open(os.path.join(path, "labels.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.writelines(f"{int(y)}\n" for y in ds.labels)
    meta = {
        "classes": ds.n_classes,
        "views": ds.n_views,
        "samples": ds.n_samples,
        "dims": ",".join(str(x.shape[1]) for x in ds.views),
    }
    if ds.seed is not None:
        meta["seed"] = int(ds.seed)
    if ds.ratio is not None:
        meta["ratio"] = f"{ds.ratio:.9g}"
    with open(os.path.join(path, "meta"), "w", encoding="utf-8",
              newline="") as fh:
        fh.writelines(f"{k}={v}\n" for k, v in meta.items())
    return path


def _write_matrix(path, x):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in x:
            fh.write(",".join(f"{v:.9g}" for v in row))
            fh.write("\n")


def _read_matrix(path, expect_cols=None):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if expect_cols is not None and len(fields) != expect_cols:
                raise ValueError(
                    f"{path}:{lineno}: expected {expect_cols} fields, "
                    f"got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if expect_cols is None:
                expect_cols = len(fields)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def load_dataset(path):
    """Read a dataset directory written by save_dataset."""
    meta_path = os.path.join(path, "meta")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"missing meta file: {meta_path}")
    meta = {}
    with open(meta_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{meta_path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            meta[key] = value
    for key in ("classes", "views", "samples", "dims"):
        if key not in meta:
            raise ValueError(f"{meta_path}: missing key {key!r}")
    n_classes = int(meta["classes"])
    n_views = int(meta["views"])
    n_samples = int(meta["samples"])
    dims = [int(d) for d in meta["dims"].split(",")]
    if len(dims) != n_views:
        raise ValueError(f"{meta_path}: dims count does not match views")
    labels_path = os.path.join(path, "labels.csv")
    if not os.path.exists(labels_path):
        raise FileNotFoundError(f"missing labels file: {labels_path}")
    labels = _read_matrix(labels_path, expect_cols=1)[:, 0]
    if not np.all(labels == np.rint(labels)):
        raise ValueError(f"{labels_path}: labels must be integers")
    labels = labels.astype(np.int64)
    if len(labels) != n_samples:
        raise ValueError(f"{labels_path}: expected {n_samples} labels, "
                         f"got {len(labels)}")
    views = []
    for v in range(n_views):
        view_path = os.path.join(path, f"view_{v}.csv")
        if not os.path.exists(view_path):
            raise FileNotFoundError(f"missing view file: {view_path}")
        x = _read_matrix(view_path, expect_cols=dims[v])
        if x.shape[0] != n_samples:
            raise ValueError(
                f"{view_path}: expected {n_samples} rows, got {x.shape[0]}")
        views.append(x)
    seed = int(meta["seed"]) if "seed" in meta else None
    ratio = float(meta["ratio"]) if "ratio" in meta else None
    return MultiViewDataset(views=views, labels=labels, n_classes=n_classes,
                            seed=seed, ratio=ratio).validate()
