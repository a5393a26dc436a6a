"""Build the optional compiled kernel extension.

The package works without it (kernels.py falls back to numpy), so a failed
cythonize or compile is tolerated rather than fatal.
"""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "tclnet._fast_kernels",
        sources=["src/tclnet/_fast_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        return cythonize([ext], language_level=3)
    except Exception as exc:
        sys.stderr.write(f"skipping compiled kernels: {exc}\n")
        return []


setup(ext_modules=extensions())
