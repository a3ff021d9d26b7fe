"""Build the optional compiled kernels.

The package works without them: ``projbank._kernels`` falls back to the
numpy implementations when ``projbank._ckernels`` cannot be imported.
"""
import os
import platform

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def _extensions():
    if os.environ.get("PROJBANK_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    flags = ["-O3"]
    if platform.machine() in ("x86_64", "AMD64") and os.name != "nt":
        # hardware popcount; every x86-64 CPU since ~2008 has it
        flags.append("-mpopcnt")
    ext = Extension(
        "projbank._ckernels",
        ["src/projbank/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=flags,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
