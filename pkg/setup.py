"""Build script.

The compiled kernel extension is optional: when Cython (or a C compiler) is
unavailable the package installs anyway and falls back to the pure-numpy
kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            # Full -ffast-math (keeping __FAST_MATH__ defined) plus
            # -march=native let the compiler vectorise the exp/tanh loops
            # through libmvec at the widest ISA the build host supports;
            # the extension is always compiled from source, so
            # host-specific codegen is safe.  The kernels keep every
            # intermediate finite for finite inputs (softmax subtracts the
            # row max before exponentiating), and parity with the numpy
            # backend is covered by tolerance-based tests.
            #
            # Alignment peeling and alignment versioning are disabled:
            # both would route some elements (or some whole calls) through
            # scalar code whose rounding differs from the vector body, so
            # results would depend on where the allocator happened to
            # place each array — breaking bitwise run-to-run
            # reproducibility.  With them off, every element takes the
            # same (unaligned-access) vector path.
            Extension(
                "spsd_vit.kernels._cykernels",
                ["src/spsd_vit/kernels/_cykernels.pyx"],
                extra_compile_args=[
                    "-O3",
                    "-ffast-math",
                    "-march=native",
                    "--param=vect-max-peeling-for-alignment=0",
                    "--param=vect-max-version-for-alignment-checks=0",
                ],
                libraries=["m"],
            )
        ],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
