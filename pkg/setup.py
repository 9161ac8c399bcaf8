import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

# keep a*b+c unfused so compiled and numpy kernels agree bit for bit
CFLAGS = ["-O3", "-ffp-contract=off"]


def _extensions():
    if os.environ.get("CORRGAN_NO_EXT"):
        return []
    src = "src/corrgan/_kernels.pyx" if USE_CYTHON else "src/corrgan/_kernels.c"
    if not os.path.exists(src):
        return []
    ext = Extension(
        "corrgan._kernels",
        [src],
        include_dirs=[numpy.get_include()],
        extra_compile_args=CFLAGS,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    if USE_CYTHON:
        return cythonize(
            [ext],
            compiler_directives={"language_level": 3, "boundscheck": False, "wraparound": False, "cdivision": True},
        )
    return [ext]


setup(ext_modules=_extensions())
