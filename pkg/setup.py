import os

from setuptools import setup

ext_modules = []
if os.environ.get("QPLAB_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            Extension("qplab._kernels", ["src/qplab/_kernels.pyx"], include_dirs=[np.get_include()]),
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
