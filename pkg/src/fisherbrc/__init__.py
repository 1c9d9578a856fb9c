"""Offline RL with offset critics and gradient penalties, plus the baselines it is compared against."""
from . import autodiff  # noqa: F401  (enables float64 before anything else touches JAX)

__version__ = "0.1.0"
