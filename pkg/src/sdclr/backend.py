"""Selects the convolution kernel backend at import time.

The compiled Cython extension is preferred; the pure-numpy fallback is used
when the extension was not built. Override with the ``SDCLR_KERNELS``
environment variable: ``auto`` (default), ``compiled``, or ``numpy``.
"""

import importlib
import os

from . import _kernels_np

_CHOICE = os.environ.get("SDCLR_KERNELS", "auto").lower()


def _load():
    if _CHOICE not in ("auto", "compiled", "numpy"):
        raise ValueError(
            f"SDCLR_KERNELS must be auto|compiled|numpy, got {_CHOICE!r}"
        )
    if _CHOICE == "numpy":
        return _kernels_np
    try:
        return importlib.import_module("sdclr._kernels")
    except ImportError:
        if _CHOICE == "compiled":
            raise ImportError(
                "SDCLR_KERNELS=compiled but the sdclr._kernels extension is "
                "not built; install with `pip install -e . --no-build-isolation`"
            )
        return _kernels_np


_impl = _load()

im2col = _impl.im2col
col2im = _impl.col2im


def backend_name():
    """Name of the active kernel backend: 'compiled' or 'numpy'."""
    return _impl.BACKEND_NAME


def get_backend(name):
    """Return a specific kernel module by name, regardless of the active one."""
    if name == "numpy":
        return _kernels_np
    if name == "compiled":
        return importlib.import_module("sdclr._kernels")
    raise ValueError(f"unknown backend {name!r}")
