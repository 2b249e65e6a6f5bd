"""Build the optional Cython core; the package falls back to numpy without it."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CFIMPUTE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "cfimpute._bartcore",
                    ["src/cfimpute/_bartcore.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-fno-fast-math", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
