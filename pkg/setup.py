"""Build hook for the optional Cython kernels.

The package works without them; a failed or skipped build leaves the numpy
fallback in charge.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("COPULA_DIB_NO_EXT", "") in ("", "0"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "copula_dib._kernels",
                    ["src/copula_dib/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-fno-math-errno"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
