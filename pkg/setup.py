"""Build the optional Cython tree kernels.

The package works without them: ``prognostic._kernels`` falls back to the
numpy implementation when the extension is not importable.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PROGNOSTIC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "prognostic._kernels._ctrees",
                    ["src/prognostic/_kernels/_ctrees.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math / -march=native: the numpy fallback must
                    # reproduce the same IEEE results
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
