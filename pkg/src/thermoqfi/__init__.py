"""Phase-space quantum Fisher information for thermometry of open bosonic modes."""

from .errors import *  # noqa: F401,F403
from . import brownian, estimation, hilbert, phase_space, twopoint  # noqa: F401

__version__ = "0.1.0"
