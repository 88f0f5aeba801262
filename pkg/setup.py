import numpy
from setuptools import Extension, setup

# The native kernel module is an optimisation only; the package falls back to
# the numpy implementations in actorgraph._kernels_py when it is absent.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "actorgraph._native",
                ["src/actorgraph/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
