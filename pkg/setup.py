import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "oudefend.kernels._conv3d",
        ["src/oudefend/kernels/_conv3d.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fopenmp", "-funroll-loops"],
        extra_link_args=["-fopenmp"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
