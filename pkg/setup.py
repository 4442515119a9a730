import os

from setuptools import setup

ext_modules = []
if not os.environ.get("REPSHARD_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/repshard/_chacha.pyx"], language_level=3, nthreads=0
        )
    except Exception:
        # The package falls back to the pure-Python keystream at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
