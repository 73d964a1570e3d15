from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mlva.kernels._lstm_ext",
                ["src/mlva/kernels/_lstm_ext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-march=native"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # pure-python install still works; the numpy fallback kernel is used
    ext_modules = []

setup(ext_modules=ext_modules)
