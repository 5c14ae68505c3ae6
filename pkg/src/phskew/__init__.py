"""Partially hyperbolic skew products: spectral certificates, holonomies,
accessibility covers, deformations and random fiber dynamics."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .spectral import ToralAutomorphism, spectral_summary, check_anosov  # noqa: F401
from .skew import SkewProduct  # noqa: F401
from .primitives import FiberMap  # noqa: F401
