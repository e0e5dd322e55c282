"""Build the optional Cython kernel core.

The extension is optional: if Cython or a C compiler is unavailable the
package installs without it and ``orbitdet`` falls back to the numpy kernels.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: failed to build {ext.name} ({exc})")


def extensions():
    if os.environ.get("ORBITDET_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError:
        return []
    ext = Extension(
        "orbitdet._ckernels",
        ["src/orbitdet/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    directives = {
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "language_level": 3,
    }
    return cythonize([ext], compiler_directives=directives)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
