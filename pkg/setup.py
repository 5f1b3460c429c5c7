"""Build script for the optional compiled scan kernel.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the similarity scan cheaper.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:  # source install without Cython: ship pure Python
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mnemos.kernels._native",
                sources=["src/mnemos/kernels/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
