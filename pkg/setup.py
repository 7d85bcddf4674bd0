# Builds the optional compiled kernels; the package falls back to numpy
# when the extension is missing.
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "psrspoof.nn._kernels_c",
                ["src/psrspoof/nn/_kernels_c.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                # vectorised exp lives in glibc's libmvec
                libraries=["mvec", "m"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
