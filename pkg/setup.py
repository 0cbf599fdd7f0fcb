import sys

import setuptools

if sys.version_info < (3, 9):
    raise RuntimeError("gmm_wae requires Python 3.9+")

setuptools.setup()
