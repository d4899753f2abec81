# -*- coding: utf-8 -*-
#
# ivret documentation build configuration file

import os
import sys

# autodoc imports the package from the checkout
sys.path.insert(0, os.path.abspath('..'))

on_rtd = os.environ.get('READTHEDOCS', None) == 'True'
if not on_rtd:  # only import and set the theme if we're building docs locally
    import sphinx_rtd_theme
    html_theme = 'sphinx_rtd_theme'
    html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]

extensions = ['sphinx.ext.autodoc',
              'sphinx.ext.viewcode']

source_suffix = '.rst'
master_doc = 'index'

project = u'ivret'
copyright = u'2026, ivret contributors'
version = '0.1.0'
release = '0.1.0'

exclude_patterns = ['_build']
pygments_style = 'sphinx'
htmlhelp_basename = 'ivretdoc'

man_pages = [
    ('index', 'ivret', u'ivret Documentation', [u'ivret contributors'], 1)
]
