import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "xfreqgs._kernels._accum",
        ["src/xfreqgs/_kernels/_accum.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off: the accumulation kernel must match the pure-Python
        # reference bit for bit, so FMA contraction is disabled.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
