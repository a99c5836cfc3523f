import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# The compiled core is an optional accelerator: the package falls back to the
# numpy backend at import time if tierkv._core is missing.
setup(
    ext_modules=cythonize(
        [
            Extension(
                "tierkv._core",
                ["src/tierkv/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
)
