"""Build the optional Cython kernels.

The extension is marked optional: if compilation fails the package still
installs and ``tpscore.kernels`` falls back to the pure-Python twin.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # Cython missing: ship the pure-Python fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "tpscore._kernels",
                ["src/tpscore/_kernels.pyx"],
                # compensated summation must not be contracted into FMAs
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
