from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "infsa._kernels",
        ["src/infsa/_kernels.pyx"],
        extra_compile_args=["-O3"],
        # a failed compile leaves the pure-Python fallback in charge
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
