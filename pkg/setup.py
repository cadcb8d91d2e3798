"""Builds the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import);
building it makes SHAP attribution and batch prediction much faster.
"""
from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "credlens._fastkernels",
                ["src/credlens/_fastkernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
