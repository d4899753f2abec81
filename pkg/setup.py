#!/usr/bin/env python
# -*- coding: utf-8 -*-
import os

from setuptools import setup, find_packages

BASE_PATH = os.path.abspath(os.path.dirname(__file__))


with open(os.path.join(BASE_PATH, 'README.rst')) as readme_file:
    readme = readme_file.read()

setup(
    name='ivret',
    version='0.1.0',
    description='identifiable latent variable models for cross-modal retrieval',
    long_description=readme,
    install_requires=['numpy>=1.17',
                      'scipy>=1.0',
                      'tornado>=4.0.0',
                      'jinja2',
                      'argcomplete>=0.6.6',
                      'PyYAML>=5.1',
                      ],
    extras_require={
        'test': ['pytest'],
        'docs': ['sphinx_rtd_theme']
    },
    packages=find_packages(exclude=['test', 'test.*']),
    include_package_data=True,
    package_data={
        'ivret': ['*.yml', 'templates/*']
    },
    entry_points={
        'console_scripts': [
            'ivret = ivret.cli:main',
        ],
    },
    license="http://www.apache.org/licenses/LICENSE-2.0",
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: Implementation :: CPython',
    ],
)
