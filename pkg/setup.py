"""Build script for the optional compiled decode kernel.

The package works without the extension (gridar.kernels falls back to the
pure-Python implementation), so a failed compile should not block install.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("GRIDAR_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        extensions = [
            Extension(
                "gridar._kernels",
                ["src/gridar/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # fp-contract off: no fma fusion, keeps results bit-identical
                # to the pure-Python fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ]
        ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
