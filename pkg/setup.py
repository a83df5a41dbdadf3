"""Build script: compiles the optional Cython core.

The compiled extension accelerates the hot sampling loops; if Cython or a C
compiler is unavailable the package installs anyway and falls back to the
pure-numpy kernels at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/dgdn/_kernels/_core.pyx",
        language_level="3",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
