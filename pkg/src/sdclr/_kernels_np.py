"""Pure-numpy implementations of the convolution patch kernels.

Same contracts as the compiled extension in ``_kernels.pyx``; used as the
fallback when the extension is unavailable (see ``backend``). Arrays are
NHWC and C-contiguous.
"""

import numpy as np

BACKEND_NAME = "numpy"


def im2col(x, kh, kw, sh, sw, ph, pw):
    """Unfold ``x` (N,H,W,C) into patch rows of shape (N*OH*OW, kh*kw*C)."""
    n, h, w, c = x.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if ph or pw:
        xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
        xp[:, ph:ph + h, pw:pw + w, :] = x
    else:
        xp = x
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, :, ki, kj, :] = xp[:, ki:ki + oh * sh:sh, kj:kj + ow * sw:sw, :]
    return cols.reshape(n * oh * ow, kh * kw * c)


def col2im(cols, n, h, w, c, kh, kw, sh, sw, ph, pw):
    """Scatter-add patch rows back to an (N,H,W,C) array (adjoint of im2col)."""
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    view = cols.reshape(n, oh, ow, kh, kw, c)
    xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, ki:ki + oh * sh:sh, kj:kj + ow * sw:sw, :] += view[:, :, :, ki, kj, :]
    if ph or pw:
        return np.ascontiguousarray(xp[:, ph:ph + h, pw:pw + w, :])
    return xp
