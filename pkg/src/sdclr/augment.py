"""Stochastic image augmentation chains for two-view contrastive training.

Images are float32 (H, W, C) in [0, 1]. Every transform preserves shape and
clamps its output back into [0, 1]. All randomness comes from the
caller-supplied numpy Generator, so two calls with independent streams
produce the two views and a fixed seed reproduces outputs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class AugmentationChain:
    """Ordered list of (kind, params, prob) transform descriptors."""

    ops: tuple = field(default_factory=tuple)

    def to_list(self):
        return [dict(op) for op in self.ops]


def simclr_chain(crop_scale=(0.2, 1.0), ratio=(0.75, 4.0 / 3.0),
                 jitter=(0.4, 0.4, 0.4, 0.1), p_jitter=0.8,
                 p_flip=0.5, p_gray=0.2) -> AugmentationChain:
    """Crop / flip / color-jitter / grayscale chain with standard defaults."""
    return AugmentationChain(ops=(
        {"kind": "random_resized_crop", "prob": 1.0,
         "scale": tuple(crop_scale), "ratio": tuple(ratio)},
        {"kind": "hflip", "prob": p_flip},
        {"kind": "color_jitter", "prob": p_jitter,
         "brightness": jitter[0], "contrast": jitter[1],
         "saturation": jitter[2], "hue": jitter[3]},
        {"kind": "grayscale", "prob": p_gray},
    ))


def _resize_bilinear(img, out_h, out_w):
    h, w, _ = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    top = a + (b - a) * wx
    bot = c + (d - c) * wx
    return top + (bot - top) * wy


def _random_resized_crop(img, op, rng):
    h, w, _ = img.shape
    area = h * w
    lo, hi = op["scale"]
    rlo, rhi = op["ratio"]
    ch = cw = None
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        aspect = np.exp(rng.uniform(np.log(rlo), np.log(rhi)))
        cw_try = int(round(np.sqrt(target * aspect)))
        ch_try = int(round(np.sqrt(target / aspect)))
        if 0 < cw_try <= w and 0 < ch_try <= h:
            ch, cw = ch_try, cw_try
            break
    if ch is None:  # fall back to the largest valid center crop
        ch = cw = min(h, w)
    top = rng.integers(0, h - ch + 1)
    left = rng.integers(0, w - cw + 1)
    crop = img[top:top + ch, left:left + cw]
    return _resize_bilinear(crop, h, w)


def _rgb_to_hsv(img):
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    v = maxc
    spread = maxc - minc
    s = np.where(maxc > 0, spread / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(spread, 1e-12)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc,
                 np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack([v, t, p], axis=-1), np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1), np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1), np.stack([v, p, q], axis=-1),
    ]
    out = np.empty(h.shape + (3,), dtype=h.dtype)
    for idx, ch in enumerate(choices):
        m = i == idx
        out[m] = ch[m]
    return out


def _gray(img):
    return img @ _LUMA.astype(img.dtype)


def _color_jitter(img, op, rng):
    # the four adjustments run in a random order, torchvision-style
    order = rng.permutation(4)
    for which in order:
        if which == 0 and op["brightness"] > 0:
            b = op["brightness"]
            img = img * rng.uniform(max(0.0, 1 - b), 1 + b)
        elif which == 1 and op["contrast"] > 0:
            c = op["contrast"]
            f = rng.uniform(max(0.0, 1 - c), 1 + c)
            mean = _gray(img).mean()
            img = (img - mean) * f + mean
        elif which == 2 and op["saturation"] > 0:
            s = op["saturation"]
            f = rng.uniform(max(0.0, 1 - s), 1 + s)
            g = _gray(img)[..., None]
            img = g + (img - g) * f
        elif which == 3 and op["hue"] > 0:
            shift = rng.uniform(-op["hue"], op["hue"])
            h, s, v = _rgb_to_hsv(np.clip(img, 0.0, 1.0))
            img = _hsv_to_rgb((h + shift) % 1.0, s, v)
        img = np.clip(img, 0.0, 1.0)
    return img


def augment(image, chain, rng):
    """Apply a chain to one image, returning a new array of the same shape."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3:
        raise InvalidParameterError("augment expects an (H, W, C) image")
    if float(img.min()) < 0.0 or float(img.max()) > 1.0:
        raise InvalidParameterError("augment expects values in [0, 1]")
    out = img.copy()
    for op in chain.ops:
        apply = op.get("prob", 1.0) >= 1.0 or rng.uniform() < op["prob"]
        if not apply:
            continue
        kind = op["kind"]
        if kind == "random_resized_crop":
            out = _random_resized_crop(out, op, rng)
        elif kind == "hflip":
            out = out[:, ::-1, :]
        elif kind == "color_jitter":
            out = _color_jitter(out, op, rng)
        elif kind == "grayscale":
            out = np.repeat(_gray(out)[..., None], out.shape[-1], axis=-1)
        elif kind == "identity":
            pass
        else:
            raise InvalidParameterError(f"unknown transform kind {kind!r}")
        np.clip(out, 0.0, 1.0, out=out)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment_pair(image, chain, rng_a, rng_b):
    """Two independently augmented views of the same image."""
    return augment(image, chain, rng_a), augment(image, chain, rng_b)
