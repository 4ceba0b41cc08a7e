from setuptools import setup, find_packages
from nonloclaw import __version__ as version
from os import path

__version__ = version

here = path.abspath(path.dirname(__file__))

with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name="nonloclaw",
    version=__version__,
    scripts=['scripts/nonloclaw.py'],
    packages=find_packages(exclude=['tests']),
    description="Monotone discretisations of nonlocal scalar conservation laws: implicit Euler semigroups, "
                "resolvent solvers and entropy verification",
    long_description=long_description,
    long_description_content_type='text/markdown',
    package_data={'nonloclaw': ['configs/*.cfg']},
    python_requires='>=3.8',
    install_requires=['numpy', 'scipy', 'pandas', 'altair'],
    tests_require=['pytest'],
)
