import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("IRSLOC_SKIP_EXTENSION"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "irsloc._kernels._core",
                    ["src/irsloc/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython available: install pure-Python; the package selects the
        # numpy fallback kernels at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
