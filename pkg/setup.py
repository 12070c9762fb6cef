from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off keeps the compiled kernels bit-identical to the pure-Python
# fallback (no FMA contraction of a*b+c).
ext = Extension(
    "emorank._kernels_c",
    ["src/emorank/_kernels_c.pyx"],
    extra_compile_args=["-O3", "-ffp-contract=off"],
)

setup(ext_modules=cythonize([ext], language_level=3))
