"""Build script: compiles the optional kernel extension.

The package works without the extension (pure-numpy fallback); build
failures therefore degrade to a warning instead of aborting the install.
"""

import warnings

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "sdclr._kernels",
        sources=["src/sdclr/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except Exception as exc:  # noqa: BLE001 - any build-env problem means fallback
    warnings.warn(f"building without compiled kernels: {exc}")

setup(ext_modules=ext_modules)
