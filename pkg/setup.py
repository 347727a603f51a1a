"""Build hook for the optional compiled fixed-point core.

The package is pure Python plus one optional Cython extension
(``wkbprop._core._kernels_cy``).  If Cython or a C compiler is missing, or the
extension fails to build for any reason, installation proceeds and the package
falls back to the NumPy implementation at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/wkbprop/_core/_kernels_cy.pyx"],
        language_level=3,
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    sys.stderr.write(f"wkbprop: skipping compiled core ({exc!r}); "
                     "pure-Python backend will be used\n")
    ext_modules = []

setup(ext_modules=ext_modules)
