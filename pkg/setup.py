"""Build hooks for the optional compiled kernel extension.

The package is fully functional without the extension (the NumPy fallback is
selected at import); a failed compile therefore downgrades to a warning
instead of failing the install.
"""

import warnings

from setuptools import setup

ext_modules = []
cmdclass = {}
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension(
            "splitmixer.kernels._ckernels",
            ["src/splitmixer/kernels/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )],
        compiler_directives={"language_level": "3"},
    )

    from setuptools.command.build_ext import build_ext

    class OptionalBuildExt(build_ext):
        def run(self):
            try:
                super().run()
            except Exception as e:  # missing compiler etc.
                warnings.warn(f"compiled kernels skipped ({e}); "
                              "falling back to the NumPy backend")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as e:
                warnings.warn(f"compiled kernels skipped ({e}); "
                              "falling back to the NumPy backend")

    cmdclass["build_ext"] = OptionalBuildExt
except ImportError as e:
    warnings.warn(f"Cython/NumPy unavailable at build time ({e}); "
                  "installing with the NumPy backend only")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
