import os

from setuptools import Extension, setup

PYX = "src/pipebft/_ckernels.pyx"

ext_modules = []
if os.path.exists(PYX):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("pipebft._ckernels", [PYX])],
            compiler_directives={"language_level": "3", "boundscheck": False},
        )
    except ImportError:
        # Pure-Python fallback still works; the compiled kernels are optional.
        pass

setup(ext_modules=ext_modules)
