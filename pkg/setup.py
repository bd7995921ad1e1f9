"""Build hook for the optional compiled Kalman kernel.

The package works without the extension: ``cesmarkdown.kalman`` falls back to
a pure-Python implementation when the compiled module cannot be imported.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # build without the extension
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "cesmarkdown._kalman_ext",
                ["src/cesmarkdown/_kalman_ext.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
