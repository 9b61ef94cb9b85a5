"""Critical branching random walks on the nonnegative integers with small drift toward a reflecting origin."""

from .rw_core import WalkParams

__version__ = "0.1.0"

__all__ = ["WalkParams", "__version__"]
