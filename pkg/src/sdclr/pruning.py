"""Magnitude-based prune masks, the random-dropout baseline, mask
application, sparsity reporting, and the compact mask file format.

Masks are binary keep(1)/drop(0) arrays keyed by parameter name, shaped
exactly like the parameters they cover. Drop selection is fully
deterministic: the candidate weights are totally ordered by
(|w|, tensor name, flat index) ascending, and a ratio r drops the first
floor(r * n) candidates. That total order also makes drop sets nest across
increasing ratios.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, InvalidParameterError

_MAGIC = b"SDCLRMSK"


@dataclass(frozen=True)
class PruneMask:
    masks: dict            # name -> uint8 array, parameter-shaped
    target_ratio: float
    scope: str             # "global" | "per_layer"
    epoch_created: int = 0

    def zero_fraction(self):
        total = sum(m.size for m in self.masks.values())
        zeros = sum(int((m == 0).sum()) for m in self.masks.values())
        return zeros / total if total else 0.0

    def dropped_keys(self):
        """Set of (name, flat index) pairs that are dropped."""
        out = set()
        for name, m in self.masks.items():
            for idx in np.flatnonzero(m.reshape(-1) == 0):
                out.add((name, int(idx)))
        return out

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self.masks):
            h.update(name.encode())
            h.update(np.packbits(self.masks[name].reshape(-1)).tobytes())
        return h.hexdigest()

    def save(self, path):
        """Compact bitmap file: magic, JSON header, packed mask bits."""
        header = {
            "target_ratio": self.target_ratio,
            "scope": self.scope,
            "epoch_created": self.epoch_created,
            "tensors": [
                {"name": n, "shape": list(self.masks[n].shape)}
                for n in sorted(self.masks)
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        out = bytearray()
        out += _MAGIC
        out += struct.pack("<I", len(blob))
        out += blob
        for n in sorted(self.masks):
            out += np.packbits(self.masks[n].reshape(-1)).tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise ContractError(f"{path} is not a mask file")
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12:12 + hlen])
        off = 12 + hlen
        masks = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            n = int(np.prod(shape))
            nbytes = (n + 7) // 8
            bits = np.unpackbits(
                np.frombuffer(raw[off:off + nbytes], dtype=np.uint8), count=n
            )
            masks[t["name"]] = bits.astype(np.uint8).reshape(shape)
            off += nbytes
        return cls(masks=masks, target_ratio=header["target_ratio"],
                   scope=header["scope"], epoch_created=header["epoch_created"])


@dataclass(frozen=True)
class SparsityReport:
    per_layer: tuple  # ((name, zero_fraction), ...) in feed-forward order
    overall: float

    def to_dict(self):
        return {"per_layer": [[n, f] for n, f in self.per_layer],
                "overall": self.overall}


def _check_ratio(ratio):
    if not (0.0 <= ratio < 1.0):
        raise InvalidParameterError(f"prune ratio must be in [0, 1), got {ratio}")


def _ordered_drop(tensors, n_drop):
    """Drop the n_drop smallest weights under the (|w|, name, index) order."""
    if not tensors:
        raise InvalidParameterError("no prunable tensors given")
    mags = np.concatenate([np.abs(t).reshape(-1).astype(np.float64)
                           for _, t in tensors])
    name_rank = np.concatenate([np.full(t.size, i, dtype=np.int64)
                                for i, (_, t) in enumerate(tensors)])
    flat_idx = np.concatenate([np.arange(t.size, dtype=np.int64)
                               for _, t in tensors])
    order = np.lexsort((flat_idx, name_rank, mags))
    dropped = order[:n_drop]
    keep = np.ones(mags.size, dtype=np.uint8)
    keep[dropped] = 0
    out = {}
    off = 0
    for name, t in tensors:
        out[name] = keep[off:off + t.size].reshape(t.shape).copy()
        off += t.size
    return out


def magnitude_mask(params, ratio, scope="global", prunable=None,
                   epoch=0) -> PruneMask:
    """Mask dropping the floor(ratio * n) smallest-magnitude weights.

    Global scope pools every prunable tensor into one ranking; per_layer
    applies the ratio within each tensor. ``prunable`` lists the parameter
    names eligible for pruning, in feed-forward order.
    """
    _check_ratio(ratio)
    if scope not in ("global", "per_layer"):
        raise InvalidParameterError(f"scope must be global|per_layer, got {scope!r}")
    if prunable is None:
        prunable = sorted(params)
    tensors = [(name, np.asarray(params[name])) for name in prunable]
    if scope == "global":
        n_total = sum(t.size for _, t in tensors)
        masks = _ordered_drop(tensors, int(ratio * n_total))
    else:
        masks = {}
        for name, t in tensors:
            masks.update(_ordered_drop([(name, t)], int(ratio * t.size)))
    return PruneMask(masks=masks, target_ratio=ratio, scope=scope,
                     epoch_created=epoch)


def random_dropout_mask(params, ratio, rng, prunable=None, epoch=0) -> PruneMask:
    """Baseline mask dropping each prunable weight iid with prob ratio."""
    _check_ratio(ratio)
    if prunable is None:
        prunable = sorted(params)
    masks = {}
    for name in prunable:
        shape = np.asarray(params[name]).shape
        masks[name] = (rng.random(shape) >= ratio).astype(np.uint8)
    return PruneMask(masks=masks, target_ratio=ratio, scope="global",
                     epoch_created=epoch)


def all_ones_mask(params, prunable=None, epoch=0) -> PruneMask:
    """No-op mask (ratio 0); used by the plain two-view baseline."""
    if prunable is None:
        prunable = sorted(params)
    masks = {name: np.ones(np.asarray(params[name]).shape, dtype=np.uint8)
             for name in prunable}
    return PruneMask(masks=masks, target_ratio=0.0, scope="global",
                     epoch_created=epoch)


def apply_mask(params, mask) -> dict:
    """Parameters with masked entries zeroed; unmasked tensors pass through."""
    out = {}
    for name, value in params.items():
        m = mask.masks.get(name)
        if m is None:
            out[name] = value
            continue
        if m.shape != value.shape:
            raise ContractError(
                f"mask shape {m.shape} != param shape {value.shape} for {name!r}"
            )
        out[name] = value * m.astype(value.dtype)
    extra = set(mask.masks) - set(params)
    if extra:
        raise ContractError(f"mask covers unknown parameters: {sorted(extra)}")
    return out


def layerwise_sparsity(mask, order=None) -> SparsityReport:
    """Per-layer zero fractions (feed-forward order) plus the overall one."""
    names = list(order) if order is not None else list(mask.masks)
    per_layer = []
    zeros = total = 0
    for name in names:
        m = mask.masks[name]
        z = int((m == 0).sum())
        per_layer.append((name, z / m.size))
        zeros += z
        total += m.size
    return SparsityReport(per_layer=tuple(per_layer),
                          overall=zeros / total if total else 0.0)
