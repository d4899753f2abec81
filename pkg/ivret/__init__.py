# -*- coding: utf-8 -*-

"""Top-level package for ivret."""

__version__ = '0.1.0'
