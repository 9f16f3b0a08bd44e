"""Tree-valued resampling dynamics on finite ultra-metric measure spaces."""

from .kernels import BACKEND
from .mmspace import FiniteUmmSpace, SpaceError, validate_space

__version__ = "0.1.0"

__all__ = ["BACKEND", "FiniteUmmSpace", "SpaceError", "validate_space", "__version__"]
