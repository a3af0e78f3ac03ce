from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("nhspin._kernels", ["src/nhspin/_kernels.pyx"], include_dirs=[np.get_include()])],
        language_level=3,
    )
except ImportError:
    # the pure-Python kernels are used instead
    ext_modules = []

setup(ext_modules=ext_modules)
