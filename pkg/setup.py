import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # no compiler toolchain: the pure-Python sweeps are used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("gibbslab._sweep", [os.path.join("src", "gibbslab", "_sweep.pyx")],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
