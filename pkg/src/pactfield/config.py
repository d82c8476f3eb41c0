"""Flat run configuration shared by the CLI commands.

Values resolve as CLI flag > ``PACTFIELD_*`` environment variable > config
file > built-in default. The config file is a flat YAML mapping; nested
values and unknown keys are rejected.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .core import CircularMask, ConfigurationError, GridSpec, RingGeometry
from .optimize import TrainConfig

ENV_PREFIX = "PACTFIELD_"


@dataclass
class RunConfig:
    """Every knob of the pipeline, one flat key each."""

    # grid and geometry (mm)
    grid_size: int = 256
    pitch: float = 0.1
    n_transducers: int = 512
    ring_radius: float = 50.0
    mask_radius: float = 11.0
    # phantom and simulation
    spec: str = "default"
    seed: int = 0
    dt: float = 25e-9
    pulse_sigma: float = 0.0  # 0 -> 4 * dt
    spreading: bool = False
    ray_step: float = 0.05
    # beamforming
    v0: float = 1499.4
    das_sos: float = 1510.0
    delay: float = 0.0
    delays: str = "-0.8:0.8:32"
    body_center: tuple = (0.3, -0.2)
    body_radius: float = 5.0
    body_sos: float = 1561.0
    # deconvolution
    patch_size: float = 3.2
    overlap: float = 0.75
    merge_fwhm: float = 1.5
    eps_deconv: float = 1e-3
    n_angles: int = 512
    # training
    epochs: int = 10
    steps_per_epoch: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_tv: float = 1.2e-4
    hidden: int = 64
    sine_layers: int = 2
    omega0: float = 30.0
    out_scale: float = 100.0
    full_chain: bool = True
    # evaluation and plumbing
    methods: str = "das,dual_sos,deconv_true_sos,nf_apact"
    point: tuple = (0.0, 0.0)
    workers: int = 0
    out: str = "."
    phantom: str = ""
    signals: str = ""
    sos: str = ""
    figures: bool = True

    def __post_init__(self):
        if self.grid_size < 8:
            raise ConfigurationError(f"grid_size must be >= 8, got {self.grid_size}")
        for name in ("pitch", "ring_radius", "mask_radius", "dt", "ray_step", "v0", "das_sos",
                     "body_sos", "body_radius", "patch_size", "merge_fwhm"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.overlap < 1:
            raise ConfigurationError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.workers < 0:
            raise ConfigurationError("workers must be >= 0 (0 = all cores)")
        if self.mask_radius >= self.ring_radius:
            raise ConfigurationError("mask must lie inside the transducer ring")

    # --- derived objects ------------------------------------------------------

    @property
    def grid(self) -> GridSpec:
        return GridSpec.centered(self.grid_size, pitch=self.pitch)

    @property
    def mask(self) -> CircularMask:
        return CircularMask((0.0, 0.0), self.mask_radius)

    @property
    def geometry(self) -> RingGeometry:
        return RingGeometry(self.n_transducers, self.ring_radius)

    @property
    def delay_list(self) -> list[float]:
        from .beamform import parse_delays
        return list(parse_delays(self.delays))

    @property
    def method_list(self) -> list[str]:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, steps_per_epoch=self.steps_per_epoch, learning_rate=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps, lambda_tv=self.lambda_tv,
            delays=self.delay_list, eps_deconv=self.eps_deconv, n_angles=self.n_angles,
            ray_step=self.ray_step, seed=self.seed, hidden=self.hidden, sine_layers=self.sine_layers,
            omega0=self.omega0, out_scale=self.out_scale, patch_size=self.patch_size,
            overlap=self.overlap, merge_fwhm=self.merge_fwhm, full_chain=self.full_chain)

    def as_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.as_dict(), sort_keys=True, default_flow_style=None)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def _coerce(key: str, value):
    """Convert ``value`` to the type of ``key``'s default."""
    default = _DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            if isinstance(value, (bool, int, np.integer)):
                return bool(value)
            raise ValueError(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            out = tuple(float(v) for v in value)
            if len(out) != len(default):
                raise ValueError(value)
            return out
        if value is None:
            return ""
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for '{key}': {value!r}") from exc


def check_keys(mapping: dict, source: str) -> None:
    unknown = sorted(set(mapping) - set(_FIELDS))
    if unknown:
        raise ConfigurationError(f"unknown config key(s) in {source}: {', '.join(unknown)}")


def load_config_file(path) -> dict:
    """Read a flat YAML mapping, rejecting nesting and unknown keys."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a key-value mapping at top level")
    check_keys(data, str(path))
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigurationError(f"{path}: key '{k}' is nested; the config is flat")
    return data


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key == "config":
                continue
            out[key] = value
    check_keys(out, "environment")
    return out


def resolve_config(flags: dict | None = None, config_file=None, environ=None) -> RunConfig:
    """Merge sources in precedence order flag > env > file > default."""
    merged = {}
    if config_file:
        merged.update(load_config_file(config_file))
    merged.update(env_overrides(environ))
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    check_keys(flags, "flags")
    merged.update(flags)
    return RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
