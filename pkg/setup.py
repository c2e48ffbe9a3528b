"""Build script.

The cycle-level fabric kernel has two interchangeable implementations:
a pure-Python one (always available) and a Cython one (built here when
a C toolchain and Cython are present).  If the extension cannot be
built the package still installs and falls back to the Python kernel
at import time, so this script treats every build failure as soft.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mavec.fabric._kernel",
                ["src/mavec/fabric/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - toolchain-dependent
    sys.stderr.write(f"mavec: skipping Cython kernel build ({exc}); using pure-Python kernel\n")
    ext_modules = []

setup(ext_modules=ext_modules)
