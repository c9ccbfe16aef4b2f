"""Build script for the optional compiled core.

The pure-Python backend is always installed; if the extension fails to build
the package still imports and selects the fallback at runtime.
"""
import logging
import os

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger(__name__)


class OptionalBuildExt(build_ext):
    """Let the extension build fail without aborting the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            log.warning("compiled core not built (%s); using Python fallback", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            log.warning("failed to build %s (%s)", ext.name, exc)


def extensions():
    if os.environ.get("DIRACSC_NO_EXTENSION"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "diracsc._core",
        ["src/diracsc/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
