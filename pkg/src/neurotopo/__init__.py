"""EEG chunks -> 5-band spectral topographic images -> small CNN -> cross-validated metrics."""

__version__ = "0.1.0"

from .errors import DivergenceError, ValidationError

__all__ = ["DivergenceError", "ValidationError", "__version__"]
