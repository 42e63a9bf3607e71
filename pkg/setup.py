import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the package falls back at import
    cythonize = None

numpy_dir = os.path.dirname(np.__file__)

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "circadian_cpd._core",
                ["src/circadian_cpd/_core.pyx"],
                include_dirs=[np.get_include()],
                library_dirs=[
                    os.path.join(numpy_dir, "random", "lib"),
                    os.path.join(numpy_dir, "_core", "lib"),
                ],
                libraries=["npyrandom", "npymath"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
