"""Benchmark the compiled kernel extension against the numpy fallback.

Times im2col/col2im and an end-to-end conv forward+backward at the batch
shapes the default encoder actually runs, for whichever backends are
importable.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend

# (label, N, H, W, Cin, Cout, k, stride, pad)
DEFAULT_CASES = (
    ("block1 256x32x32x3->16", 256, 32, 32, 3, 16, 3, 1, 1),
    ("block2 256x16x16x16->32", 256, 16, 16, 16, 32, 3, 1, 1),
    ("block3 256x8x8x32->64", 256, 8, 8, 32, 64, 3, 1, 1),
    ("block4 256x4x4x64->128", 256, 4, 4, 64, 128, 3, 1, 1),
)


def _time(fn, reps):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def available_backends():
    names = ["numpy"]
    try:
        backend.get_backend("compiled")
        names.append("compiled")
    except ImportError:
        pass
    return names


def bench_case(case, impl, dtype=np.float32, reps=5, rng=None):
    """Seconds per op for one conv-shaped case on one backend."""
    _, n, h, w, cin, cout, k, s, p = case
    rng = rng or np.random.default_rng(0)
    x = rng.random((n, h, w, cin)).astype(dtype)
    weight = rng.random((k * k * cin, cout)).astype(dtype)
    cols = impl.im2col(x, k, k, s, s, p, p)
    dy = (cols @ weight).astype(dtype)

    t_im2col = _time(lambda: impl.im2col(x, k, k, s, s, p, p), reps)
    t_col2im = _time(
        lambda: impl.col2im(cols, n, h, w, cin, k, k, s, s, p, p), reps)

    def fwd_bwd():
        cc = impl.im2col(x, k, k, s, s, p, p)
        y = cc @ weight
        dw = cc.T @ dy
        dcols = dy @ weight.T
        impl.col2im(dcols, n, h, w, cin, k, k, s, s, p, p)
        return y, dw

    t_conv = _time(fwd_bwd, reps)
    return {"im2col": t_im2col, "col2im": t_col2im, "conv_fwd_bwd": t_conv}


def run_benchmark(cases=DEFAULT_CASES, dtype=np.float32, reps=5):
    """Rows of (case label, backend, timings dict)."""
    rows = []
    for name in available_backends():
        impl = backend.get_backend(name)
        for case in cases:
            rows.append((case[0], name, bench_case(case, impl, dtype, reps)))
    return rows


def run_cli(dtype="float32", reps=5):
    dt = np.float32 if dtype == "float32" else np.float64
    rows = run_benchmark(dtype=dt, reps=reps)
    names = available_backends()
    print(f"kernel backends: {', '.join(names)} (active: {backend.backend_name()})")
    print(f"dtype={dtype}, reps={reps}")
    header = f"{'case':30s} {'backend':9s} {'im2col':>10s} {'col2im':>10s} {'conv f+b':>10s}"
    print(header)
    print("-" * len(header))
    by_case = {}
    for label, name, t in rows:
        print(f"{label:30s} {name:9s} {t['im2col']*1e3:9.2f}ms "
              f"{t['col2im']*1e3:9.2f}ms {t['conv_fwd_bwd']*1e3:9.2f}ms")
        by_case.setdefault(label, {})[name] = t
    if "compiled" in names:
        print()
        for label, t in by_case.items():
            if "compiled" in t and "numpy" in t:
                speedup = t["numpy"]["conv_fwd_bwd"] / t["compiled"]["conv_fwd_bwd"]
                print(f"{label:30s} compiled speedup on conv f+b: {speedup:.2f}x")
    return 0
