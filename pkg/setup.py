"""Builds the optional compiled rasterizer kernel when Cython is available.

A plain ``pip install .`` without Cython (or without a C compiler) still
produces a fully working pure-Python package; the splat renderer then runs
on its numpy fallback.  Build the fast kernel in a checkout with:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "tok4d.splat._rasterize",
                ["src/tok4d/splat/_rasterize.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
