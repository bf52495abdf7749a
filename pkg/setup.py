"""Build the optional FFTW-backed extension; installs without it when it cannot be compiled."""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler, no Cython, no fftw3
            sys.stderr.write(f"warning: compiled kernels not built ({exc}); using the numpy fallback\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(f"warning: failed to build {ext.name} ({exc}); using the numpy fallback\n")


def extensions():
    if os.environ.get("STOCHKS_PURE_PYTHON") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "stochks._ckernels",
        sources=["src/stochks/_ckernels.pyx"],
        libraries=["fftw3", "m"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
