import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "refrec.backend._native",
                ["src/refrec/backend/_native.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffast-math lets gcc vectorize the expf/erff loops via
                # libmvec; kernels guard against the NaN/Inf cases themselves
                extra_compile_args=["-O3", "-ffast-math"],
                extra_link_args=["-lmvec"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # the package must stay importable without the extension
                optional=True,
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
