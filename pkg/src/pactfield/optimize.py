"""Self-supervised joint reconstruction of the image and the SOS map.

The loss for SOS network parameters phi is::

    sum_i sum_j sum_k |k| |Y_ij - H_ij(v_phi) X_i|^2 / (N M P^2)  +  lam * TV(v_phi)

where X_i is the multichannel deconvolution of patch i under the same
transfer functions. Gradients run loss -> H -> w -> v -> phi by hand.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .aberration import (FrequencyGrid, half_frequency_grid, wavefront_profiles, wavefront_vjp)
from .beamform import DasStack, das_stack
from .core import (CircularMask, ConfigurationError, GridSpec, NumericalError, PatchLayout,
                   RasterGrid, make_patch_layout)
from .deconv import deconvolve_image, deconvolve_vjp, multichannel_deconvolve
from .nfield import SirenParams, SosField, backprop_sos, init_siren, render_sos
from .phantom import SignalSet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_tv: float = 1.2e-4  # TV ~ 0.1 x data term at init, default phantom
    delays: list = field(default_factory=lambda: list(np.linspace(-0.8, 0.8, 32)))
    eps_deconv: float = 1e-3
    n_angles: int = 512
    ray_step: float = 0.05
    seed: int = 0
    hidden: int = 64
    sine_layers: int = 2
    omega0: float = 30.0
    out_scale: float = 100.0
    patch_size: float = 3.2
    overlap: float = 0.75
    merge_fwhm: float = 1.5
    full_chain: bool = True
    chunk: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigurationError("epochs and steps_per_epoch must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.lambda_tv < 0:
            raise ConfigurationError("lambda_tv must be non-negative")
        self.delays = [float(d) for d in self.delays]


@dataclass
class LossReport:
    epoch: int
    data_term: float
    tv_term: float
    total: float
    wall_time: float

    def record(self) -> dict:
        return asdict(self)


def _finite(stage: str, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values at stage '{stage}'")


# --- loss terms -----------------------------------------------------------------

def data_loss(Y: np.ndarray, H: np.ndarray, kmag: np.ndarray, eps: float = 1e-3,
              full_chain: bool = True):
    """|k|-weighted residual of the multichannel fit and its gradient w.r.t. ``H``.

    ``Y, H``: ``(..., M, P, P)``. Returns ``(loss, G)`` with
    dL = Re sum(conj(G) dH). With ``full_chain`` the dependence of the
    deconvolved spectrum on ``H`` is differentiated too.
    """
    X = multichannel_deconvolve(Y, H, eps)
    R = Y - H * X[..., None, :, :]
    loss = float(np.sum(kmag * (R.real ** 2 + R.imag ** 2)))
    G = -2 * kmag * R * np.conj(X)[..., None, :, :]
    if full_chain:
        gX = -2 * kmag * np.sum(R * np.conj(H), axis=-3)
        G = G + deconvolve_vjp(Y, H, X, gX, eps)[1]
    return loss, G


def fused_data_loss(Y: np.ndarray, w: np.ndarray, delays, fg: FrequencyGrid, eps: float = 1e-3,
                    full_chain: bool = True):
    """Data term summed over patches and its gradient on the profiles ``w``.

    ``Y`` holds half-plane spectra ``(N, M, P, P//2 + 1)`` and ``fg`` comes
    from :func:`half_frequency_grid`. Equals the full-plane composition
    transfer_functions -> data_loss -> transfer_vjp for real patches.
    """
    loss, gw = _kernels.fused_data_loss(
        np.ascontiguousarray(Y, dtype=np.complex128), np.ascontiguousarray(w, dtype=float),
        np.asarray(delays, dtype=float), fg.kmag, fg.weight, fg.ia0, fg.ia1, fg.fa,
        fg.ib0, fg.ib1, fg.fb, fg.sym, *fg.partner, float(eps), bool(full_chain))
    return float(loss.sum()), gw


def tv_loss(field, lam: float, mask_pixels: np.ndarray | None = None):
    """Anisotropic TV ``lam * sum(|dx v| + |dy v|)`` over forward-difference pairs
    touching the mask, and its per-pixel (sub)gradient (0 at ties)."""
    v = np.asarray(getattr(getattr(field, "raster", field), "values", field), dtype=float)
    if mask_pixels is None:
        mask_pixels = np.ones(v.shape, dtype=bool)
    grad = np.zeros_like(v)
    total = 0.0
    for axis in (0, 1):
        diff = np.diff(v, axis=axis)
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(None, -1), slice(1, None)
        use = mask_pixels[tuple(lo)] | mask_pixels[tuple(hi)]
        s = np.sign(diff) * use
        total += float(np.sum(np.abs(diff) * use))
        grad[tuple(hi)] += s
        grad[tuple(lo)] -= s
    return lam * total, lam * grad


# --- optimiser --------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, betas=(0.9, 0.999),
              eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ConfigurationError("parameter/gradient count mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to adam_step")
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# --- joint problem ------------------------------------------------------------------

class JointProblem:
    """Fixed data (DAS stack, patch layout) plus the differentiable loss in phi."""

    def __init__(self, stack: DasStack, geom, mask: CircularMask, config: TrainConfig,
                 layout: PatchLayout | None = None):
        self.stack = stack
        self.geom = geom
        self.mask = mask
        self.config = config
        self.v0 = stack.v0
        self.layout = layout or make_patch_layout(stack.grid, config.patch_size, config.overlap)
        self.centers = self.layout.centers
        self.fg = half_frequency_grid(self.layout.patch_pixels, stack.grid.pitch, config.n_angles)
        self.mask_pixels = mask.pixels(stack.grid)
        peak = float(np.max(np.abs(stack.images)))
        self.scale = 1.0 / peak if peak > 0 else 1.0
        self._Y = np.stack([np.fft.rfft2(stack.images[(slice(None),) + self.layout.slices(i)])
                            for i in range(len(self.layout))]) * self.scale
        n, m, p = len(self.layout), len(stack), self.layout.patch_pixels
        self.norm = float(n * m * p * p)

    @property
    def grid(self) -> GridSpec:
        return self.stack.grid

    def sos_loss(self, sos: RasterGrid, with_grad: bool = True):
        """Data term for an SOS raster and its gradient on that raster."""
        cfg = self.config
        w = wavefront_profiles(self.centers, self.geom, sos, self.v0, self.mask, cfg.n_angles, cfg.ray_step)
        _finite("wavefront", w)
        data, gw = fused_data_loss(self._Y, w, self.stack.delays, self.fg, cfg.eps_deconv, cfg.full_chain)
        _finite("deconvolution", np.array([data]), gw)
        data /= self.norm
        if not with_grad:
            return data, None
        gsos = wavefront_vjp(self.centers, gw / self.norm, self.geom, sos, self.v0, self.mask, cfg.ray_step)
        return data, gsos

    def evaluate(self, params: SirenParams, with_grad: bool = True):
        """Return ``(data_term, tv_term, grads or None, field)``."""
        field = render_sos(params, self.grid, self.mask)
        _finite("sos_render", field.raster.values)
        data, gsos = self.sos_loss(field.raster, with_grad)
        tv, gtv = tv_loss(field.raster, self.config.lambda_tv, self.mask_pixels)
        _finite("loss", np.array([data, tv]))
        if not with_grad:
            return data, tv, None, field
        gv = (gsos + gtv).ravel()[field.masked_indices]
        _finite("gradient", gv)
        return data, tv, backprop_sos(params, field, gv), field

    def loss(self, params: SirenParams) -> float:
        d, t, _, _ = self.evaluate(params, with_grad=False)
        return d + t


def calibrate_lambda(problem: JointProblem, params: SirenParams, ratio: float = 0.1) -> float:
    """TV weight that makes ``tv_term = ratio * data_term`` for ``params``."""
    field = render_sos(params, problem.grid, problem.mask)
    data, _ = problem.sos_loss(field.raster, with_grad=False)
    tv, _ = tv_loss(field.raster, 1.0, problem.mask_pixels)
    if not tv > 0:
        raise ConfigurationError("initial SOS field has zero total variation")
    return ratio * data / tv


@dataclass
class JointResult:
    image: RasterGrid
    sos: RasterGrid
    reports: list
    params: SirenParams
    stack: DasStack = field(repr=False)


def train(problem: JointProblem, params: SirenParams, callback=None):
    """Full-batch Adam on ``problem``; one report per epoch (loss before its first step)."""
    cfg = problem.config
    state = AdamState.zeros_like(params.arrays())
    reports = []
    t_start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        for step in range(cfg.steps_per_epoch):
            data, tv, grads, _ = problem.evaluate(params)
            if step == 0:
                rep = LossReport(epoch, data, tv, data + tv, time.perf_counter() - t_start)
                reports.append(rep)
                log.info("epoch %d data=%.6e tv=%.6e total=%.6e", epoch, data, tv, data + tv)
                if callback is not None:
                    callback(rep)
            arrays, state = adam_step(params.arrays(), grads, state, cfg.learning_rate,
                                      (cfg.beta1, cfg.beta2), cfg.adam_eps)
            params = params.with_arrays(arrays)
    return params, reports


def joint_reconstruct(signals: SignalSet, config: TrainConfig, grid: GridSpec, mask: CircularMask,
                      v0: float | None = None, callback=None, stack: DasStack | None = None) -> JointResult:
    """Recover image and SOS from signals alone.

    The DAS stack is built once at the background SOS and stays fixed; only
    the SOS network is trained. The final image is the multichannel
    deconvolution under the learned SOS.
    """
    v0 = signals.background_sos if v0 is None else float(v0)
    if stack is None:
        stack = das_stack(signals, grid, v0, config.delays)
    problem = JointProblem(stack, signals.geom, mask, config)
    params = init_siren(config.seed, config.hidden, config.sine_layers, config.omega0,
                        config.out_scale, v0)
    params, reports = train(problem, params, callback)
    field = render_sos(params, grid, mask)
    image = deconvolve_image(stack, field.raster, signals.geom, mask, problem.layout, config.eps_deconv,
                             config.n_angles, config.ray_step, config.merge_fwhm, v0, config.chunk)
    return JointResult(image, field.raster, reports, params, stack)
