import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffast-math is deliberately absent: the kernels rely on IEEE -inf semantics.
extensions = [
    Extension(
        "sar._chain_fast",
        ["src/sar/_chain_fast.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
