"""Coarsening dynamics of the diffusive linear transport model and its classical limit."""
from . import (checks, classical, config, exitcost, gaussian_tails, halfline, kernels, measures,
               trajectory, wholeline)

__version__ = "1.0.0"

__all__ = ["checks", "classical", "config", "exitcost", "gaussian_tails", "halfline", "kernels",
           "measures", "trajectory", "wholeline", "__version__"]
