"""Shared raster and ring-array geometry.

World frame: ring center at the origin, x to the right, y upward, angles
counterclockwise from +x. Lengths are in millimetres, speeds in m/s.
Raster arrays are indexed ``values[row, col]`` with the row index growing
along +y, so array axes line up with world axes without flips.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PactError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PactError, ValueError):
    """Inconsistent geometry, layout or run configuration."""


class DomainError(PactError, ValueError):
    """Argument outside the physically meaningful domain."""


class FileFormatError(PactError, ValueError):
    """Malformed PGRID / SIGSET / SIRN file."""


class NumericalError(PactError, ArithmeticError):
    """Non-finite values appeared during a computation."""


# Coefficients of the fifth-order water sound-speed polynomial (Marczak 1997),
# lowest order first, temperature in degrees Celsius.
_WATER_SOS_COEFFS = (
    1.402385e3,
    5.038813,
    -5.799136e-2,
    3.287156e-4,
    -1.398845e-6,
    2.787860e-9,
)


def water_sos(temperature_celsius: float) -> float:
    """Speed of sound in pure water [m/s] at the given temperature.

    Valid on 0-95 degC; raises ``DomainError`` outside that range.
    """
    t = float(temperature_celsius)
    if not (0.0 <= t <= 95.0) or math.isnan(t):
        raise DomainError(f"water temperature {t} degC outside [0, 95]")
    out = 0.0
    for coeff in reversed(_WATER_SOS_COEFFS):
        out = out * t + coeff
    return out


@dataclass(frozen=True)
class GridSpec:
    """Pixel lattice without values.

    ``origin`` is the world position (mm) of the centre of pixel (row 0, col 0).
    """

    width: int
    height: int
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pitch > 0:
            raise ConfigurationError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def centered(cls, width: int, height: int | None = None, pitch: float = 0.1) -> "GridSpec":
        """Grid whose geometric centre sits on the ring centre."""
        height = width if height is None else height
        return cls(width, height, pitch, (-(width - 1) * pitch / 2, -(height - 1) * pitch / 2))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.pitch * np.arange(self.width)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.pitch * np.arange(self.height)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """World coordinates (X, Y) of every pixel centre, each of shape ``(height, width)``."""
        return np.meshgrid(self.x, self.y)

    def world(self, col, row):
        return (self.origin[0] + np.asarray(col) * self.pitch,
                self.origin[1] + np.asarray(row) * self.pitch)

    def pixel(self, x, y):
        """Fractional (col, row) of a world point; exact inverse of :meth:`world`."""
        return ((np.asarray(x) - self.origin[0]) / self.pitch,
                (np.asarray(y) - self.origin[1]) / self.pitch)

    def zeros(self) -> "RasterGrid":
        return RasterGrid(self, np.zeros(self.shape))

    def full(self, value: float) -> "RasterGrid":
        return RasterGrid(self, np.full(self.shape, float(value)))


@dataclass
class RasterGrid:
    """A scalar field (image, SOS map, mask, PSF) on a :class:`GridSpec`."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def width(self) -> int:
        return self.grid.width

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def pitch(self) -> float:
        return self.grid.pitch

    @property
    def origin(self) -> tuple[float, float]:
        return self.grid.origin

    def with_values(self, values) -> "RasterGrid":
        return RasterGrid(self.grid, values)


@dataclass(frozen=True)
class RingGeometry:
    """Evenly spaced transducer ring centred on the world origin."""

    n_transducers: int = 512
    radius: float = 50.0
    angle_offset: float = 0.0

    def __post_init__(self):
        if self.n_transducers < 3:
            raise ConfigurationError(f"need at least 3 transducers, got {self.n_transducers}")
        if not self.radius > 0:
            raise ConfigurationError(f"ring radius must be positive, got {self.radius}")

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_transducers) / self.n_transducers + self.angle_offset


def transducer_positions(geom: RingGeometry) -> np.ndarray:
    """Transducer coordinates as an ``(N_t, 2)`` array in mm."""
    a = geom.angles
    return np.stack([geom.radius * np.cos(a), geom.radius * np.sin(a)], axis=1)


@dataclass(frozen=True)
class CircularMask:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 11.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"mask radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def contains(self, x, y):
        return np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1]) <= self.radius

    def pixels(self, grid: GridSpec) -> np.ndarray:
        """Boolean ``(height, width)`` array of in-mask pixel centres."""
        X, Y = grid.mesh()
        return self.contains(X, Y)


@dataclass(frozen=True)
class PatchLayout:
    """Square, overlapping patch tiling of a grid.

    Patches are listed row-major (bottom row first). Boundary patches are
    shifted inward so that each one lies fully on the grid.
    """

    grid: GridSpec
    patch_size: float
    overlap_fraction: float
    patch_pixels: int
    stride_pixels: int
    row_starts: np.ndarray = field(repr=False)
    col_starts: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.row_starts)

    @property
    def n_rows(self) -> int:
        return len(np.unique(self.row_starts))

    @property
    def n_cols(self) -> int:
        return len(np.unique(self.col_starts))

    @property
    def centers(self) -> np.ndarray:
        """World coordinates (mm) of the patch centres, shape ``(N, 2)``."""
        half = (self.patch_pixels - 1) / 2
        cx, cy = self.grid.world(self.col_starts + half, self.row_starts + half)
        return np.stack([cx, cy], axis=1)

    def slices(self, i: int) -> tuple[slice, slice]:
        r, c, p = int(self.row_starts[i]), int(self.col_starts[i]), self.patch_pixels
        return slice(r, r + p), slice(c, c + p)

    def extract(self, image: np.ndarray) -> np.ndarray:
        """All patches of a ``(..., H, W)`` array stacked as ``(N, ..., P, P)``."""
        return np.stack([image[(Ellipsis,) + self.slices(i)] for i in range(len(self))])


def _starts(n: int, p: int, s: int) -> list[int]:
    starts = list(range(0, n - p + 1, s))
    if starts[-1] + p < n:
        starts.append(n - p)
    return starts


def make_patch_layout(grid: GridSpec, patch_size: float, overlap: float) -> PatchLayout:
    """Tile ``grid`` with square patches of side ``patch_size`` mm."""
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError(f"overlap fraction must be in [0, 1), got {overlap}")
    p = int(round(patch_size / grid.pitch))
    if p < 1:
        raise ConfigurationError(f"patch of {patch_size} mm is smaller than one pixel")
    if p > grid.width or p > grid.height:
        raise ConfigurationError(
            f"patch of {p} px does not fit in a {grid.width}x{grid.height} grid")
    s = max(1, int(round(p * (1.0 - overlap))))
    rows, cols = _starts(grid.height, p, s), _starts(grid.width, p, s)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return PatchLayout(grid, float(patch_size), float(overlap), p, s,
                       rr.ravel().astype(int), cc.ravel().astype(int))


# --- PGRID raster files ---------------------------------------------------

_PGRID_MAGIC = b"PGRD"
_PGRID_HEADER = struct.Struct("<4sIIddd")


def write_pgrid(path, raster: RasterGrid) -> None:
    g = raster.grid
    header = _PGRID_HEADER.pack(_PGRID_MAGIC, g.width, g.height, g.pitch, *g.origin)
    body = np.ascontiguousarray(raster.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pgrid(path) -> RasterGrid:
    data = Path(path).read_bytes()
    if len(data) < _PGRID_HEADER.size:
        raise FileFormatError(f"{path}: truncated PGRID header")
    magic, w, h, pitch, ox, oy = _PGRID_HEADER.unpack_from(data)
    if magic != _PGRID_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, expected {_PGRID_MAGIC!r}")
    expected = _PGRID_HEADER.size + 4 * w * h
    if len(data) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_PGRID_HEADER.size).reshape(h, w)
    if not np.all(np.isfinite(values)):
        raise FileFormatError(f"{path}: non-finite raster values")
    try:
        grid = GridSpec(w, h, pitch, (ox, oy))
    except ConfigurationError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    return RasterGrid(grid, values.astype(float))
