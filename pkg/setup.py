"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing compiler only costs speed, never functionality.
Set DIXONVOL_SKIP_NATIVE=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"WARNING: skipping native kernel build: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: could not build {ext.name}: {exc}")


ext_modules = []
cmdclass = {}
if os.environ.get("DIXONVOL_SKIP_NATIVE") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "dixonvol.kernels._native",
                    ["src/dixonvol/kernels/_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
        cmdclass = {"build_ext": OptionalBuildExt}
    except ImportError as exc:
        print(f"WARNING: Cython/NumPy unavailable, native kernels disabled: {exc}")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
