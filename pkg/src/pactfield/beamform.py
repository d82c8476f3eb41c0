"""Delay-and-sum reconstruction for ring arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ConfigurationError, DomainError, GridSpec, RasterGrid, transducer_positions
from .phantom import SOS_WINDOW, SignalSet


@dataclass
class DasStack:
    """DAS images of one signal set at several extra delays (mm)."""

    delays: np.ndarray
    images: np.ndarray
    grid: GridSpec
    v0: float

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        if self.images.shape != (len(self.delays),) + self.grid.shape:
            raise ConfigurationError("stack images do not match delays/grid")
        if np.any(np.diff(self.delays) <= 0):
            raise ConfigurationError("stack delays must be strictly increasing")

    def __len__(self) -> int:
        return len(self.delays)

    def __getitem__(self, j: int) -> RasterGrid:
        return RasterGrid(self.grid, self.images[j])


@dataclass(frozen=True)
class BodyModel:
    center: tuple[float, float]
    radius: float
    body_sos: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"body radius must be positive, got {self.radius}")
        if not SOS_WINDOW[0] <= self.body_sos <= SOS_WINDOW[1]:
            raise ConfigurationError(f"body SOS {self.body_sos} outside {SOS_WINDOW}")


def parse_delays(text: str) -> np.ndarray:
    """``"min:max:count"`` -> evenly spaced delays in mm."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError as exc:
        raise ConfigurationError(f"delays must look like min:max:count, got {text!r}") from exc
    if n < 1 or (n > 1 and hi <= lo):
        raise ConfigurationError(f"invalid delay range {text!r}")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def _args(signals: SignalSet, grid: GridSpec):
    tx = transducer_positions(signals.geom)
    return (np.ascontiguousarray(signals.data, dtype=float), float(signals.t0), float(signals.dt),
            np.ascontiguousarray(tx[:, 0]), np.ascontiguousarray(tx[:, 1]), grid.x, grid.y)


def _check_v(v0):
    if not v0 > 0:
        raise DomainError(f"assumed SOS must be positive, got {v0}")


def das_stack(signals: SignalSet, grid: GridSpec, v0: float, delays) -> DasStack:
    """DAS image for every delay: ``sum_n S((|r - r_n| - d) / v0, n)``.

    Signals are linearly interpolated in time; reads outside the record are 0.
    """
    _check_v(v0)
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    images = _kernels.das_stack(*_args(signals, grid), float(v0), delays)
    return DasStack(delays, images, grid, float(v0))


def das(signals: SignalSet, grid: GridSpec, v0: float, d: float = 0.0) -> RasterGrid:
    return das_stack(signals, grid, v0, [d])[0]


def dual_sos_das(signals: SignalSet, grid: GridSpec, v0: float, body: BodyModel) -> RasterGrid:
    """DAS with a two-speed travel time: water ``v0`` outside the body disc, ``body_sos`` inside."""
    _check_v(v0)
    if np.hypot(*body.center) + body.radius >= signals.geom.radius:
        raise ConfigurationError("body model must lie inside the transducer ring")
    img = _kernels.dual_sos_das(*_args(signals, grid), float(v0), float(body.center[0]),
                                float(body.center[1]), float(body.radius), float(body.body_sos))
    return RasterGrid(grid, img)
