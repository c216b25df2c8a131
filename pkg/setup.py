import warnings

from setuptools import Extension, setup

# The compiled kernel is an optional speedup: if Cython is unavailable the
# package still installs and falls back to the pure-Python chain runner.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mdbc._kernels",
                ["src/mdbc/_kernels.pyx"],
                # -ffp-contract=off: no FMA contraction, so the kernel's
                # float64 arithmetic is bit-identical to the numpy fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level="3",
    )
except ImportError:
    warnings.warn("Cython not available; building mdbc without the compiled kernel")
    ext_modules = []

setup(ext_modules=ext_modules)
