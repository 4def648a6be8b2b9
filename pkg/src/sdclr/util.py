"""Hashing, deterministic rng derivation, and atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from pathlib import Path

import numpy as np


def stable_json(obj) -> str:
    """Canonical JSON text (sorted keys, no whitespace variance)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_arrays(arrays: dict) -> str:
    """Order-independent digest of a {name: ndarray} mapping."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _code(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def seed_sequence(root_seed, *parts) -> np.random.SeedSequence:
    """Stable seed derivation: one root seed, split by named purpose.

    Purpose parts may be strings or ints; strings are crc32-coded so the
    derivation is reproducible across platforms and sessions.
    """
    return np.random.SeedSequence([_code(root_seed)] + [_code(p) for p in parts])


def derive_rng(root_seed, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, *parts)))


def atomic_write_bytes(path, data: bytes):
    """Write-temp-then-rename so readers never observe partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())
