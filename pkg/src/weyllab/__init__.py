"""Numerical laboratory for closed geodesics, orbit sums and windowed trace functionals
on compact hyperbolic and negatively curved surfaces."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
