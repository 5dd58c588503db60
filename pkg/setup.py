"""Build script for the optional compiled kernel core.

    python setup.py build_ext --inplace

compiles defstream._kernels next to the package sources; the package works
without it (numpy fallback selected at import).  Plain installs skip the
extension automatically when Cython or numpy headers are unavailable.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension(
            "defstream._kernels",
            ["src/defstream/_kernels.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
