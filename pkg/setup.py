"""Builds the optional compiled frame loop; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GREENQUEUE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "greenqueue._kernels",
                ["src/greenqueue/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fused multiply-add: keeps results bit-identical to the Python loop
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
