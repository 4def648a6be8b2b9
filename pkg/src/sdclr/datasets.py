"""Source datasets: CIFAR-style binary archives, directories of arrays, and
a synthetic colored-shapes generator for environments without CIFAR.

Images are uint8 NHWC; labels are int64.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidSpecError

DATA_ROOT_ENV = "SDCLR_DATA_ROOT"


@dataclass
class DataSource:
    name: str
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def n_classes(self):
        return int(np.unique(self.train_labels).size)

    @property
    def image_shape(self):
        return self.train_images.shape[1:]


def _unpickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="bytes")


def load_cifar10(root) -> DataSource:
    """Read the cifar-10-batches-py archive layout."""
    base = Path(root) / "cifar-10-batches-py"
    if not base.exists():
        raise DataError(
            f"CIFAR-10 not found under {root!r}; download cifar-10-python.tar.gz "
            "from https://www.cs.toronto.edu/~kriz/ and extract it there, or use "
            "the synthetic source"
        )
    xs, ys = [], []
    for i in range(1, 6):
        d = _unpickle(base / f"data_batch_{i}")
        xs.append(d[b"data"])
        ys.extend(d[b"labels"])
    train_x = np.concatenate(xs).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    d = _unpickle(base / "test_batch")
    test_x = d[b"data"].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return DataSource(
        name="cifar10",
        train_images=np.ascontiguousarray(train_x),
        train_labels=np.asarray(ys, dtype=np.int64),
        test_images=np.ascontiguousarray(test_x),
        test_labels=np.asarray(d[b"labels"], dtype=np.int64),
    )


def load_cifar100(root) -> DataSource:
    """Read the cifar-100-python archive layout (fine labels)."""
    base = Path(root) / "cifar-100-python"
    if not base.exists():
        raise DataError(
            f"CIFAR-100 not found under {root!r}; download cifar-100-python.tar.gz "
            "from https://www.cs.toronto.edu/~kriz/ and extract it there, or use "
            "the synthetic source"
        )
    tr = _unpickle(base / "train")
    te = _unpickle(base / "test")
    to_img = lambda a: np.ascontiguousarray(
        a.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    )
    return DataSource(
        name="cifar100",
        train_images=to_img(tr[b"data"]),
        train_labels=np.asarray(tr[b"fine_labels"], dtype=np.int64),
        test_images=to_img(te[b"data"]),
        test_labels=np.asarray(te[b"fine_labels"], dtype=np.int64),
    )


def load_array_dir(root) -> DataSource:
    """Read train_images/train_labels/test_images/test_labels .npy files."""
    base = Path(root)
    needed = ["train_images", "train_labels", "test_images", "test_labels"]
    arrays = {}
    for name in needed:
        p = base / f"{name}.npy"
        if not p.exists():
            raise DataError(f"array source missing {p}")
        arrays[name] = np.load(p)
    return DataSource(name=f"arrays:{base.name}", **arrays)


# ---------------------------------------------------------------------------
# Synthetic colored shapes
# ---------------------------------------------------------------------------

_SHAPE_KINDS = [
    "disk", "square", "triangle", "ring", "plus",
    "diamond", "hbars", "vbars", "cross", "dots",
]


def _shape_mask(kind, size, rng):
    """Rasterize one shape instance as a soft [0,1] mask with jittered pose."""
    cx = rng.uniform(0.32, 0.68) * size
    cy = rng.uniform(0.32, 0.68) * size
    r = rng.uniform(0.22, 0.34) * size
    theta = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    x = xx - cx
    y = yy - cy
    xr = np.cos(theta) * x + np.sin(theta) * y
    yr = -np.sin(theta) * x + np.cos(theta) * y

    def soft(d):  # signed distance (<=0 inside) -> soft edge
        return np.clip(0.5 - d, 0.0, 1.0)

    if kind == "disk":
        d = np.hypot(xr, yr) - r
    elif kind == "square":
        d = np.maximum(np.abs(xr), np.abs(yr)) - r * 0.9
    elif kind == "triangle":
        # equilateral-ish: intersection of three half-planes
        d1 = yr - r * 0.75
        d2 = -0.866 * xr - 0.5 * yr - r * 0.75
        d3 = 0.866 * xr - 0.5 * yr - r * 0.75
        d = np.maximum(np.maximum(d1, d2), d3)
    elif kind == "ring":
        d = np.abs(np.hypot(xr, yr) - r * 0.85) - r * 0.3
    elif kind == "plus":
        w = r * rng.uniform(0.3, 0.42)
        d = np.minimum(np.maximum(np.abs(xr) - w, np.abs(yr) - r),
                       np.maximum(np.abs(yr) - w, np.abs(xr) - r))
    elif kind == "diamond":
        d = (np.abs(xr) + np.abs(yr)) - r * 1.15
    elif kind == "hbars":
        gap = r * rng.uniform(0.55, 0.75)
        w = r * 0.26
        d = np.minimum(np.maximum(np.abs(yr - gap) - w, np.abs(xr) - r),
                       np.maximum(np.abs(yr + gap) - w, np.abs(xr) - r))
    elif kind == "vbars":
        gap = r * rng.uniform(0.55, 0.75)
        w = r * 0.26
        d = np.minimum(np.maximum(np.abs(xr - gap) - w, np.abs(yr) - r),
                       np.maximum(np.abs(xr + gap) - w, np.abs(yr) - r))
    elif kind == "cross":
        w = r * rng.uniform(0.24, 0.34)
        a = (xr + yr) / np.sqrt(2)
        b = (xr - yr) / np.sqrt(2)
        d = np.minimum(np.maximum(np.abs(a) - w, np.abs(b) - r),
                       np.maximum(np.abs(b) - w, np.abs(a) - r))
    elif kind == "dots":
        g = r * 0.62
        dd = None
        for sx in (-g, g):
            for sy in (-g, g):
                cur = np.hypot(xr - sx, yr - sy) - r * 0.34
                dd = cur if dd is None else np.minimum(dd, cur)
        d = dd
    else:
        raise InvalidSpecError(f"unknown shape kind {kind!r}")
    return soft(d)


def _hsv_to_rgb(h, s, v):
    h = (h % 1.0) * 6.0
    i = np.floor(h)
    f = h - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = int(i) % 6
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def synthetic_shapes(n_classes=10, train_per_class=600, test_per_class=100,
                     image_size=32, seed=0) -> DataSource:
    """Generate a labeled toy dataset of rendered shapes.

    Each class is a shape archetype; hue is a nuisance factor drawn per
    sample, and pose/size/thickness vary within class, so recognizing a
    class requires learning its spatial pattern rather than its color.
    """
    if n_classes > len(_SHAPE_KINDS):
        raise InvalidSpecError(
            f"synthetic source supports at most {len(_SHAPE_KINDS)} classes"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))

    def make_split(per_class):
        n = n_classes * per_class
        images = np.empty((n, image_size, image_size, 3), dtype=np.uint8)
        labels = np.empty(n, dtype=np.int64)
        i = 0
        for c in range(n_classes):
            for _ in range(per_class):
                mask = _shape_mask(_SHAPE_KINDS[c], image_size, rng)
                fg = np.array(_hsv_to_rgb(rng.uniform(), rng.uniform(0.55, 1.0),
                                          rng.uniform(0.7, 1.0)))
                bg = np.array(_hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.25),
                                          rng.uniform(0.05, 0.3)))
                img = bg[None, None, :] + mask[:, :, None] * (fg - bg)[None, None, :]
                img += rng.normal(0.0, 0.03, img.shape)
                images[i] = (np.clip(img, 0, 1) * 255).astype(np.uint8)
                labels[i] = c
                i += 1
        return images, labels

    train_x, train_y = make_split(train_per_class)
    test_x, test_y = make_split(test_per_class)
    return DataSource("synthetic", train_x, train_y, test_x, test_y)


def get_source(cfg) -> DataSource:
    """Build a DataSource from a dataset config dict."""
    kind = cfg.get("source", "synthetic")
    root = cfg.get("root") or os.environ.get(DATA_ROOT_ENV, "./data")
    if kind == "synthetic":
        return synthetic_shapes(
            n_classes=cfg.get("n_classes", 10),
            train_per_class=cfg.get("train_per_class", 600),
            test_per_class=cfg.get("test_per_class", 100),
            image_size=cfg.get("image_size", 32),
            seed=cfg.get("data_seed", 0),
        )
    if kind == "cifar10":
        return load_cifar10(root)
    if kind == "cifar100":
        return load_cifar100(root)
    if kind == "arrays":
        return load_array_dir(root)
    raise InvalidSpecError(f"unknown dataset source {kind!r}")
