"""Build script: compiles the optional fast-kernel extension when Cython is
available; the package falls back to the numpy kernels otherwise."""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "serlab._speedups",
                ["src/serlab/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:  # pure-python install still works
    warnings.warn(f"building without compiled kernels: {exc}")

setup(ext_modules=ext_modules)
