"""Positivity and spectra of Schroedinger operators with several inverse-square poles."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .core import (BoundedTailSpec, Pole, PotentialSpec, SpectralResult, a_lambda,  # noqa: F401
                   classify_masses, hardy_constant, mu_upper_bound)
