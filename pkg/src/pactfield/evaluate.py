"""Image/SOS quality metrics and the method benchmark."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from skimage.metrics import structural_similarity

from .core import ConfigurationError, RasterGrid

log = logging.getLogger(__name__)

PSNR_IDENTICAL = math.inf
METHODS = ("das", "dual_sos", "deconv_true_sos", "nf_apact")


def _values(img):
    return np.asarray(getattr(img, "values", img), dtype=float)


def psnr(test, truth, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _values(test), _values(truth)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    if not data_range > 0:
        raise ConfigurationError("data_range must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10 * np.log10(data_range ** 2 / mse))


def ssim(test, truth, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5, K1 0.01, K2 0.03)."""
    a, b = _values(test), _values(truth)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ConfigurationError(f"SSIM needs images of at least 11x11, got {a.shape}")
    return float(structural_similarity(a, b, data_range=data_range, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, K1=0.01, K2=0.03))


def normalize_pair(test, truth):
    """Scale both images by the truth maximum and clip to [0, 1]."""
    a, b = _values(test), _values(truth)
    peak = b.max()
    if not peak > 0:
        raise ConfigurationError("reference image has no positive values")
    return np.clip(a / peak, 0, 1), np.clip(b / peak, 0, 1)


def sos_rmse(sos, truth, mask_pixels) -> float:
    a, b = _values(sos), _values(truth)
    return float(np.sqrt(np.mean((a[mask_pixels] - b[mask_pixels]) ** 2)))


def patch_psnr(image, reference, layout, mask_pixels=None) -> np.ndarray:
    """PSNR of each layout patch after whole-image normalisation.

    Patches whose centre pixel lies outside ``mask_pixels`` are skipped, as
    are patches where both images agree exactly.
    """
    a, b = normalize_pair(image, reference)
    out = []
    for i in range(len(layout)):
        sl = layout.slices(i)
        if mask_pixels is not None:
            r = (sl[0].start + sl[0].stop) // 2
            c = (sl[1].start + sl[1].stop) // 2
            if not mask_pixels[r, c]:
                continue
        v = psnr(a[sl], b[sl])
        if math.isfinite(v):
            out.append(v)
    return np.array(out)


@dataclass
class EvalReport:
    method: str
    psnr: float
    ssim: float
    sos_rmse: float = math.nan
    runtime: float = 0.0
    image: RasterGrid | None = field(default=None, repr=False)
    sos: RasterGrid | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"method": self.method, "psnr_db": round(self.psnr, 4), "ssim": round(self.ssim, 5),
                "sos_rmse_mps": round(self.sos_rmse, 3), "runtime_s": round(self.runtime, 3)}


def score(method: str, image: RasterGrid, reference: RasterGrid, sos=None, truth_sos=None,
          mask_pixels=None, runtime: float = 0.0) -> EvalReport:
    a, b = normalize_pair(image, reference)
    err = math.nan
    if sos is not None and truth_sos is not None:
        err = sos_rmse(sos, truth_sos, mask_pixels)
    return EvalReport(method, psnr(a, b), ssim(a, b), err, runtime, image, sos)


def reference_image(truth, signals, grid=None, pulse_sigma=None, spreading=False, step=0.05) -> RasterGrid:
    """Aberration-free DAS of the true pressure: same acquisition, SOS = background.

    This is the best a uniform-SOS beamformer can do and serves as the image
    truth for PSNR/SSIM.
    """
    from .beamform import das
    from .phantom import Phantom, simulate_signals

    grid = truth.pressure.grid if grid is None else grid
    flat = Phantom(truth.pressure, truth.pressure.grid.full(truth.background_sos), truth.mask,
                   truth.background_sos)
    clean = simulate_signals(flat, signals.geom, pulse_sigma, signals.dt, spreading, step,
                             t0=signals.t0, n_samples=signals.n_samples)
    return das(clean, grid, truth.background_sos, 0.0)


def benchmark(signals, truth, methods, config, reference=None, callback=None) -> list[EvalReport]:
    """Run each requested method on ``signals`` and score it against ``truth``.

    Args:
        signals: recorded ``SignalSet``.
        truth: the ``Phantom`` the signals came from.
        methods: subset of :data:`METHODS`, run in the given order.
        config: a ``RunConfig``.
        reference: image truth; built with :func:`reference_image` if omitted.
        callback: passed to the training loop for per-epoch reports.

    Returns:
        One ``EvalReport`` per method. The DAS stack shared by the deconvolution
        methods is timed once and charged to each of them.
    """
    from .beamform import BodyModel, das, das_stack, dual_sos_das
    from .deconv import deconvolve_image
    from .optimize import joint_reconstruct

    methods = list(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigurationError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    grid = truth.pressure.grid
    mask = truth.mask
    mask_px = mask.pixels(grid)
    v0 = config.v0
    step = config.ray_step
    if reference is None:
        reference = reference_image(truth, signals, grid, config.pulse_sigma or None, config.spreading, step)
    tcfg = config.train_config()
    stack = None
    stack_time = 0.0
    reports = []
    for method in methods:
        t0 = time.perf_counter()
        if method in ("deconv_true_sos", "nf_apact") and stack is None:
            stack = das_stack(signals, grid, v0, tcfg.delays)
            stack_time = time.perf_counter() - t0
            t0 = time.perf_counter()
        if method == "das":
            image = das(signals, grid, config.das_sos, config.delay)
            sos = grid.full(config.das_sos)
            extra = 0.0
        elif method == "dual_sos":
            body = BodyModel(tuple(config.body_center), config.body_radius, config.body_sos)
            image = dual_sos_das(signals, grid, v0, body)
            X, Y = grid.mesh()
            inside = np.hypot(X - body.center[0], Y - body.center[1]) <= body.radius
            sos = RasterGrid(grid, np.where(inside, body.body_sos, v0))
            extra = 0.0
        elif method == "deconv_true_sos":
            from .core import make_patch_layout
            layout = make_patch_layout(grid, tcfg.patch_size, tcfg.overlap)
            image = deconvolve_image(stack, truth.sos, signals.geom, mask, layout, tcfg.eps_deconv,
                                     tcfg.n_angles, step, tcfg.merge_fwhm, v0)
            sos = truth.sos
            extra = stack_time
        else:
            res = joint_reconstruct(signals, tcfg, grid, mask, v0, callback, stack=stack)
            image, sos = res.image, res.sos
            extra = stack_time
        runtime = time.perf_counter() - t0 + extra
        rep = score(method, image, reference, sos, truth.sos, mask_px, runtime)
        log.info("%s psnr=%.3f ssim=%.4f sos_rmse=%.3f %.1fs", method, rep.psnr, rep.ssim,
                 rep.sos_rmse, runtime)
        reports.append(rep)
    return reports
