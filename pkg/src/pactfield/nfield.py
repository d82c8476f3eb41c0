"""Sinusoidal coordinate network for the SOS map, with hand-written backprop."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CircularMask, ConfigurationError, FileFormatError, GridSpec, RasterGrid


@dataclass
class SirenParams:
    """``layers[i] = (W, b)`` with ``W`` of shape (out, in). All but the last
    layer apply ``sin(omega0 * (W x + b))``; the last is linear."""

    layers: list
    omega0: float = 30.0
    out_scale: float = 100.0
    v0: float = 1499.4

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ConfigurationError(f"omega0 must be positive, got {self.omega0}")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        return [a for pair in self.layers for a in pair]

    def with_arrays(self, arrays) -> "SirenParams":
        it = iter(arrays)
        return SirenParams([(next(it), next(it)) for _ in self.layers], self.omega0, self.out_scale, self.v0)

    def copy(self) -> "SirenParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def count_params(hidden: int, n_sine: int, in_dim: int = 2, out_dim: int = 1) -> int:
    return (in_dim * hidden + hidden + (n_sine - 1) * (hidden * hidden + hidden)
            + hidden * out_dim + out_dim)


def init_siren(seed: int = 0, hidden: int = 64, layers: int = 2, omega0: float = 30.0,
               out_scale: float = 100.0, v0: float = 1499.4, in_dim: int = 2) -> SirenParams:
    """SIREN initialisation; ``layers`` counts the sine layers.

    First layer weights ~ U(-1/in, 1/in), later ones ~ U(+-sqrt(6/fan_in)/omega0);
    biases follow the usual U(+-1/sqrt(fan_in)).
    """
    if hidden < 1 or layers < 1:
        raise ConfigurationError("need at least one hidden unit and one sine layer")
    if not omega0 > 0:
        raise ConfigurationError(f"omega0 must be positive, got {omega0}")
    rng = np.random.default_rng(seed)
    dims = [in_dim] + [hidden] * layers + [1]
    out = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / omega0
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-1 / np.sqrt(fan_in), 1 / np.sqrt(fan_in), size=fan_out)
        out.append((W, b))
    return SirenParams(out, float(omega0), float(out_scale), float(v0))


def _forward(params: SirenParams, coords: np.ndarray, keep: bool = False):
    h = coords
    cache = []
    for W, b in params.layers[:-1]:
        z = h @ W.T + b
        cache.append((h, z))
        h = np.sin(params.omega0 * z)
    W, b = params.layers[-1]
    cache.append((h, None))
    out = h @ W.T + b
    return (out[:, 0], cache) if keep else out[:, 0]


def mlp(params: SirenParams, coords: np.ndarray) -> np.ndarray:
    """Raw network output for ``(n, 2)`` coordinates."""
    return _forward(params, np.asarray(coords, dtype=float))


@dataclass
class SosField:
    raster: RasterGrid
    masked_indices: np.ndarray
    coords: np.ndarray

    @property
    def masked_values(self) -> np.ndarray:
        return self.raster.values.ravel()[self.masked_indices]


def mask_coordinates(grid: GridSpec, mask: CircularMask):
    """Flat indices of in-mask pixels and their coordinates scaled to [-1, 1]."""
    inside = mask.pixels(grid).ravel()
    idx = np.flatnonzero(inside)
    X, Y = grid.mesh()
    d = 2 * mask.radius
    c = np.stack([2 * (X.ravel()[idx] - mask.center[0]) / d, 2 * (Y.ravel()[idx] - mask.center[1]) / d], axis=1)
    return idx, c


def render_sos(params: SirenParams, grid: GridSpec, mask: CircularMask) -> SosField:
    """SOS raster: ``v0 + out_scale * MLP(c)`` inside the mask, exactly ``v0`` outside."""
    idx, c = mask_coordinates(grid, mask)
    vals = np.full(grid.width * grid.height, params.v0)
    vals[idx] = params.v0 + params.out_scale * mlp(params, c)
    return SosField(RasterGrid(grid, vals.reshape(grid.shape)), idx, c)


def backprop_sos(params: SirenParams, field: SosField, grad_v) -> list[np.ndarray]:
    """Gradient of ``sum_p grad_v[p] * v[p]`` over masked pixels, as ``[dW0, db0, ...]``."""
    grad_v = np.asarray(grad_v, dtype=float)
    if grad_v.shape != (len(field.masked_indices),):
        raise ConfigurationError(
            f"grad_v has shape {grad_v.shape}, expected ({len(field.masked_indices)},)")
    _, cache = _forward(params, field.coords, keep=True)
    g = (params.out_scale * grad_v)[:, None]
    grads = []
    W, _ = params.layers[-1]
    h, _ = cache[-1]
    grads.append((g.T @ h, g.sum(axis=0)))
    g = g @ W
    for (W, _), (h, z) in zip(reversed(params.layers[:-1]), reversed(cache[:-1])):
        g = g * params.omega0 * np.cos(params.omega0 * z)
        grads.append((g.T @ h, g.sum(axis=0)))
        g = g @ W
    return [a for pair in reversed(grads) for a in pair]


# --- SIRN checkpoints -----------------------------------------------------------

_SIRN_MAGIC = b"SIRN"


def write_sirn(path, params: SirenParams) -> None:
    parts = [_SIRN_MAGIC, struct.pack("<I", len(params.layers))]
    parts += [struct.pack("<II", *W.shape) for W, _ in params.layers]
    parts.append(struct.pack("<ddd", params.omega0, params.out_scale, params.v0))
    parts += [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays()]
    Path(path).write_bytes(b"".join(parts))


def read_sirn(path) -> SirenParams:
    raw = Path(path).read_bytes()
    if raw[:4] != _SIRN_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}, expected {_SIRN_MAGIC!r}")
    try:
        (n,) = struct.unpack_from("<I", raw, 4)
        pos = 8
        shapes = []
        for _ in range(n):
            shapes.append(struct.unpack_from("<II", raw, pos))
            pos += 8
        omega0, out_scale, v0 = struct.unpack_from("<ddd", raw, pos)
        pos += 24
        layers = []
        for rows, cols in shapes:
            W = np.frombuffer(raw, "<f4", rows * cols, pos).reshape(rows, cols).astype(float)
            pos += 4 * rows * cols
            b = np.frombuffer(raw, "<f4", rows, pos).astype(float)
            pos += 4 * rows
            layers.append((W, b))
    except (struct.error, ValueError) as exc:
        raise FileFormatError(f"{path}: truncated SIRN file") from exc
    if pos != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return SirenParams(layers, omega0, out_scale, v0)
