"""Joint photoacoustic image and speed-of-sound reconstruction with a neural SOS field."""
from .core import (CircularMask, ConfigurationError, DomainError, FileFormatError, GridSpec,
                   NumericalError, PactError, PatchLayout, RasterGrid, RingGeometry, make_patch_layout,
                   read_pgrid, transducer_positions, water_sos, write_pgrid)

__version__ = "0.1.0"

__all__ = [
    "CircularMask", "ConfigurationError", "DomainError", "FileFormatError", "GridSpec", "NumericalError",
    "PactError", "PatchLayout", "RasterGrid", "RingGeometry", "make_patch_layout", "read_pgrid",
    "transducer_positions", "water_sos", "write_pgrid",
]
