"""Build script: compiles the optional simulation kernel extension.

The package works without the compiled kernel (a pure-Python fallback with
identical semantics is selected at import time), so a failed extension build
degrades gracefully instead of breaking the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "corridor_twin.oracle._simcore",
                ["src/corridor_twin/oracle/_simcore.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - depends on build host
    sys.stderr.write(f"corridor-twin: skipping compiled kernel ({exc}); "
                     "pure-Python fallback will be used\n")

setup(ext_modules=ext_modules)
