"""Adaptive high-order solver for the interior Dirichlet Poisson problem on smooth planar domains."""
__version__ = "0.1.0"

from .geometry import Panelization, adaptive_panelize, make_curve
from .solver import ProblemSpec, SolutionField, report, solve

__all__ = ["Panelization", "ProblemSpec", "SolutionField", "adaptive_panelize", "make_curve",
           "report", "solve", "__version__"]
