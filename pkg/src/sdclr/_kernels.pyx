# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution patch kernels (NHWC layout).

Single-pass im2col/col2im with explicit loops; float32 and float64 via a
fused type. The numpy fallback with identical contracts lives in
``_kernels_np``.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

ctypedef fused floating:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
def _im2col_impl(floating[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
                 int ph, int pw, floating[:, ::1] cols):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t i, oy, ox, ki, kj, ch, iy, ix, row, col0
    with nogil:
        for i in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    row = (i * oh + oy) * ow + ox
                    col0 = 0
                    for ki in range(kh):
                        iy = oy * sh + ki - ph
                        for kj in range(kw):
                            ix = ox * sw + kj - pw
                            if 0 <= iy < h and 0 <= ix < w:
                                for ch in range(c):
                                    cols[row, col0 + ch] = x[i, iy, ix, ch]
                            else:
                                for ch in range(c):
                                    cols[row, col0 + ch] = 0
                            col0 += c


@cython.boundscheck(False)
@cython.wraparound(False)
def _col2im_impl(floating[:, ::1] cols, int n, int h, int w, int c,
                 int kh, int kw, int sh, int sw, int ph, int pw,
                 floating[:, :, :, ::1] out):
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t i, oy, ox, ki, kj, ch, iy, ix, row, col0
    with nogil:
        for i in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    row = (i * oh + oy) * ow + ox
                    col0 = 0
                    for ki in range(kh):
                        iy = oy * sh + ki - ph
                        for kj in range(kw):
                            ix = ox * sw + kj - pw
                            if 0 <= iy < h and 0 <= ix < w:
                                for ch in range(c):
                                    out[i, iy, ix, ch] += cols[row, col0 + ch]
                            col0 += c


def im2col(x, int kh, int kw, int sh, int sw, int ph, int pw):
    """Unfold ``x`` (N,H,W,C) into patch rows of shape (N*OH*OW, kh*kw*C)."""
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    cols = np.empty((n * oh * ow, kh * kw * c), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_impl["float"](x, kh, kw, sh, sw, ph, pw, cols)
    elif x.dtype == np.float64:
        _im2col_impl["double"](x, kh, kw, sh, sw, ph, pw, cols)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, int n, int h, int w, int c, int kh, int kw,
           int sh, int sw, int ph, int pw):
    """Scatter-add patch rows back to an (N,H,W,C) array (adjoint of im2col)."""
    cols = np.ascontiguousarray(cols)
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_impl["float"](cols, n, h, w, c, kh, kw, sh, sw, ph, pw, out)
    elif cols.dtype == np.float64:
        _col2im_impl["double"](cols, n, h, w, c, kh, kw, sh, sw, ph, pw, out)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out
