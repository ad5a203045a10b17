#!/usr/bin/env python

"""The setup script."""

from setuptools import setup, find_packages

with open('README.rst') as readme_file:
    readme = readme_file.read()

with open('HISTORY.rst') as history_file:
    history = history_file.read()

requirements = [
    'Click>=7.0',
    'numpy>=1.21',
    'scipy>=1.7',
    'attrs>=21.3.0',
    'xarray>=0.20',
    'pandas>=1.3',
    'PyYAML>=5.4',
]

test_requirements = ['pytest>=6', ]

setup(
    author="Alex Qiu",
    author_email='alex.qiu@bristol.ac.uk',
    python_requires='>=3.9',
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    description="Detect internal short circuits in battery packs from the Koopman modes of module voltage prediction errors.",
    entry_points={
        'console_scripts': [
            'koopman_isc=koopman_isc.cli:main',
        ],
    },
    install_requires=requirements,
    long_description=readme + '\n\n' + history,
    include_package_data=True,
    package_data={'koopman_isc': ['data/*.csv', 'data/*.yaml']},
    keywords='koopman_isc',
    name='koopman_isc',
    packages=find_packages(include=['koopman_isc', 'koopman_isc.*']),
    test_suite='tests',
    tests_require=test_requirements,
    url='https://github.com/AQ18/koopman_isc',
    version='0.1.0',
    zip_safe=False,
)
