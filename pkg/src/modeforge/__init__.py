"""Closed-form variational mode decomposition and RF fingerprint classification.

Modules:

* ``spectral``: frames, DFT conventions, Parseval bookkeeping
* ``vmd``: closed-form mode split, center table and search, ADMM baseline
* ``autodiff``: reverse-mode tensor engine and checkpoint format
* ``model``: convolutional front end with transformer or selective-SSM encoder
* ``openset``: temperature softmax, threshold rejection, (T, tau) sweep
* ``data``: synthetic fleets, RFIQ files, splits, preprocessing
* ``training``, ``bench``, ``pipeline``, ``cli``: experiment plumbing
"""

__version__ = "0.1.0"

from .spectral import IQFrame, Spectrum, dft, idft, parseval_gap
from .vmd import (AdmmConfig, CenterSet, ModeSet, admm_vmd, lossless_vmd, optimize_centers,
                  reconstruction_error, select_centers)

__all__ = [
    "IQFrame", "Spectrum", "dft", "idft", "parseval_gap",
    "AdmmConfig", "CenterSet", "ModeSet", "admm_vmd", "lossless_vmd", "optimize_centers",
    "reconstruction_error", "select_centers",
]
