"""Patch-kernel correctness: naive oracle, adjointness, backend parity."""

import numpy as np
import pytest

from sdclr import backend

SHAPES = [
    (2, 8, 8, 3, 3, 1, 1),
    (3, 9, 7, 4, 3, 2, 1),
    (2, 8, 8, 5, 1, 2, 0),
    (1, 5, 5, 2, 5, 1, 2),
]


def naive_im2col(x, k, s, p):
    """Reference patch extraction by explicit loops."""
    n, h, w, c = x.shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p:p + h, p:p + w, :] = x
    out = np.zeros((n * oh * ow, k * k * c), dtype=x.dtype)
    row = 0
    for i in range(n):
        for oy in range(oh):
            for ox in range(ow):
                patch = xp[i, oy * s:oy * s + k, ox * s:ox * s + k, :]
                out[row] = patch.reshape(-1)
                row += 1
    return out


def backends():
    impls = [("numpy", backend.get_backend("numpy"))]
    try:
        impls.append(("compiled", backend.get_backend("compiled")))
    except ImportError:
        pass
    return impls


@pytest.mark.parametrize("name,impl", backends())
@pytest.mark.parametrize("shape", SHAPES)
def test_im2col_matches_naive(name, impl, shape):
    n, h, w, c, k, s, p = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, h, w, c))
    assert np.array_equal(impl.im2col(x, k, k, s, s, p, p), naive_im2col(x, k, s, p))


@pytest.mark.parametrize("name,impl", backends())
@pytest.mark.parametrize("shape", SHAPES)
def test_col2im_is_adjoint_of_im2col(name, impl, shape):
    # <im2col(x), C> == <x, col2im(C)> characterizes the scatter-add exactly
    n, h, w, c, k, s, p = shape
    rng = np.random.default_rng(1)
    x = rng.standard_normal((n, h, w, c))
    cols = impl.im2col(x, k, k, s, s, p, p)
    cotangent = rng.standard_normal(cols.shape)
    lhs = float((cols * cotangent).sum())
    back = impl.col2im(cotangent, n, h, w, c, k, k, s, s, p, p)
    rhs = float((x * back).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_backend_parity():
    impls = dict(backends())
    if "compiled" not in impls:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(2)
    for shape in SHAPES:
        n, h, w, c, k, s, p = shape
        for dtype in (np.float32, np.float64):
            x = rng.standard_normal((n, h, w, c)).astype(dtype)
            a = impls["numpy"].im2col(x, k, k, s, s, p, p)
            b = impls["compiled"].im2col(x, k, k, s, s, p, p)
            assert a.dtype == b.dtype == dtype
            assert np.array_equal(a, b)
            cols = rng.standard_normal(a.shape).astype(dtype)
            da = impls["numpy"].col2im(cols, n, h, w, c, k, k, s, s, p, p)
            db = impls["compiled"].col2im(cols, n, h, w, c, k, k, s, s, p, p)
            tol = 1e-6 if dtype == np.float32 else 1e-12
            assert np.allclose(da, db, atol=tol)


def test_active_backend_reports_name():
    assert backend.backend_name() in ("numpy", "compiled")


def test_benchmark_runs():
    from sdclr.benchmark import bench_case, run_benchmark
    rows = run_benchmark(cases=(("tiny", 2, 8, 8, 3, 4, 3, 1, 1),), reps=1)
    assert rows and all(t["conv_fwd_bwd"] > 0 for _, _, t in rows)
