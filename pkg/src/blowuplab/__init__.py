"""Numerical laboratory for radially symmetric chemotactic blow-up."""
from .model_core import DomainError, Params, Profile, RadialField, ResolutionError

__all__ = ["DomainError", "Params", "Profile", "RadialField", "ResolutionError"]
__version__ = "0.1.0"
