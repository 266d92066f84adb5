import numpy as np
from setuptools import setup, Extension
from Cython.Build import cythonize

ext = Extension(
    "tremorkit.engine._ckernels",
    ["src/tremorkit/engine/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3", "-fopenmp"],
    extra_link_args=["-fopenmp"],
)

setup(ext_modules=cythonize(ext, language_level=3))
