import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sbpsim._core",
                ["src/sbpsim/_core.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Cython unavailable: install pure-Python only; sbpsim.backend falls
    # back to the numpy kernels at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
