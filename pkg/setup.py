import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the kernels if a compiler is available; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            self.warn(f"compiled kernels not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            self.warn(f"failed to build {ext.name} ({exc}); using the numpy fallback")


def extensions():
    if os.environ.get("CATMAXENT_NO_EXT"):
        return []
    from Cython.Build import cythonize

    ext = Extension(
        "catmaxent._kernels",
        ["src/catmaxent/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": 3})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
