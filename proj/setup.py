import glob
import os

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ROOT = os.path.dirname(os.path.abspath(__file__))


def eigen_include():
    for cand in ("/usr/include/eigen3", "/usr/local/include/eigen3"):
        if os.path.isdir(cand):
            return cand
    raise RuntimeError("Eigen headers not found; install libeigen3-dev")


ext = Pybind11Extension(
    "_core",
    sorted(glob.glob(os.path.join(ROOT, "src", "*.cpp"))) + [os.path.join(ROOT, "python", "module.cpp")],
    include_dirs=[
        os.path.join(ROOT, "include"),
        os.path.join(ROOT, "vendor"),
        eigen_include(),
    ],
    cxx_std=20,
)

setup(
    name="sabma",
    version="0.1.0",
    ext_modules=[ext],
    cmdclass={"build_ext": build_ext},
    zip_safe=False,
)
