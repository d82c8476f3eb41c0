"""Straight-ray aberration model.

Wavefront error of a patch centre r' along direction theta::

    w(theta) = integral over the ray r' -> ring of (1 - v0 / v(l)) dl

and the per-delay transfer function of the patch::

    H(k; d) = 1/2 (exp(-j|k|(d - w(b))) + exp(+j|k|(d - w(b + pi))))

with ``b`` the angle of ``-k``. Using ``-k`` (rather than ``k``) expresses the
transfer function in numpy's ``exp(-j k.r)`` forward-FFT convention, so that
``fft2(das_patch) = H * fft2(clean_patch)`` holds with ``numpy.fft``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .core import (CircularMask, ConfigurationError, GridSpec, RasterGrid, RingGeometry)


def _raster_args(sos: RasterGrid):
    return (np.ascontiguousarray(sos.values, dtype=float), sos.origin[0], sos.origin[1], sos.pitch)


def time_of_flight(src, dst, sos: RasterGrid, v0: float, mask: CircularMask, step: float = 0.05) -> float:
    """Straight-ray travel time [s] from ``src`` to ``dst`` (both in mm)."""
    if not step > 0:
        raise ConfigurationError(f"ray step must be positive, got {step}")
    src = np.asarray(src, dtype=float).reshape(1, 2)
    dst = np.asarray(dst, dtype=float).reshape(1, 2)
    w, dist = _kernels.segment_wavefronts(src, dst, *_raster_args(sos), float(v0),
                                          *mask.center, mask.radius, float(step))
    return float((dist[0, 0] - w[0, 0]) * 1e-3 / v0)


def times_of_flight(src, dst, sos: RasterGrid, v0: float, mask: CircularMask, step: float = 0.05):
    """Travel times [s] for every pair, shape ``(len(src), len(dst))``."""
    src = np.ascontiguousarray(src, dtype=float).reshape(-1, 2)
    dst = np.ascontiguousarray(dst, dtype=float).reshape(-1, 2)
    w, dist = _kernels.segment_wavefronts(src, dst, *_raster_args(sos), float(v0),
                                          *mask.center, mask.radius, float(step))
    return (dist - w) * 1e-3 / v0, dist


def profile_angles(n_angles: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n_angles) / n_angles


@dataclass
class WavefrontProfile:
    """Wavefront error sampled on uniform angles for one patch centre.

    ``jacobian`` (optional) is a sparse ``(n_angles, H*W)`` matrix of
    dw/dv over flat raster indices; only in-mask pixels carry entries.
    """

    patch_center: tuple[float, float]
    angles: np.ndarray
    w: np.ndarray
    jacobian: sparse.csr_matrix | None = None


def wavefront_profiles(centers, geom: RingGeometry, sos: RasterGrid, v0: float, mask: CircularMask,
                       n_angles: int = 512, step: float = 0.05) -> np.ndarray:
    """Wavefront errors for many centres at once, shape ``(N, n_angles)``."""
    if n_angles < 4:
        raise ConfigurationError(f"need at least 4 wavefront angles, got {n_angles}")
    centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, 2)
    if np.any(np.hypot(centers[:, 0], centers[:, 1]) >= geom.radius):
        raise ConfigurationError("wavefront centre outside the transducer ring")
    return _kernels.wavefront_profiles(centers, profile_angles(n_angles), float(geom.radius),
                                       *_raster_args(sos), float(v0), *mask.center, mask.radius,
                                       float(step))


def wavefront_vjp(centers, gw, geom: RingGeometry, sos: RasterGrid, v0: float, mask: CircularMask,
                  step: float = 0.05) -> np.ndarray:
    """Pull a gradient on ``w[i, a]`` back to a gradient on the SOS raster.

    Entries at pixels outside ``mask`` are zeroed; the SOS there is fixed.
    """
    centers = np.ascontiguousarray(centers, dtype=float).reshape(-1, 2)
    gw = np.ascontiguousarray(gw, dtype=float)
    out = _kernels.wavefront_vjp(centers, profile_angles(gw.shape[1]), float(geom.radius),
                                 *_raster_args(sos), float(v0), *mask.center, mask.radius,
                                 float(step), gw)
    out[~mask.pixels(sos.grid)] = 0.0
    return out


def wavefront_profile(patch_center, geom: RingGeometry, sos: RasterGrid, v0: float, mask: CircularMask,
                      n_angles: int = 512, step: float = 0.05, with_jacobian: bool = False) -> WavefrontProfile:
    center = np.asarray(patch_center, dtype=float).reshape(1, 2)
    w = wavefront_profiles(center, geom, sos, v0, mask, n_angles, step)[0]
    angles = profile_angles(n_angles)
    jac = None
    if with_jacobian:
        values, ox, oy, pitch = _raster_args(sos)
        inside = mask.pixels(sos.grid).ravel()
        rows, cols, vals = [], [], []
        px, py = center[0]
        for a, theta in enumerate(angles):
            ux, uy = math.cos(theta), math.sin(theta)
            tmax = _kernels._ring_exit(px, py, ux, uy, geom.radius)
            dense = np.zeros(sos.grid.shape)
            _kernels._scatter_ray(px, py, ux, uy, tmax, values, ox, oy, pitch, float(v0),
                                  *mask.center, mask.radius, float(step), 1.0, dense)
            flat = dense.ravel()
            nz = np.flatnonzero(flat)
            nz = nz[inside[nz]]
            rows.append(np.full(nz.size, a))
            cols.append(nz)
            vals.append(flat[nz])
        jac = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(n_angles, sos.grid.width * sos.grid.height))
    return WavefrontProfile((float(center[0, 0]), float(center[0, 1])), angles, w, jac)


def wavefront_fourier_modes(profile: WavefrontProfile, max_order: int):
    """Real Fourier series coefficients ``(order, cos, sin)`` of w(theta)."""
    n = len(profile.w)
    if n < 2 * max_order + 1:
        raise ConfigurationError(f"{n} angles cannot resolve order {max_order}")
    theta = profile.angles
    modes = [(0, float(np.mean(profile.w)), 0.0)]
    for m in range(1, max_order + 1):
        modes.append((m, float(2 / n * np.sum(profile.w * np.cos(m * theta))),
                      float(2 / n * np.sum(profile.w * np.sin(m * theta)))))
    return modes


# --- transfer functions ---------------------------------------------------

@dataclass(frozen=True)
class FrequencyGrid:
    """|k| (rad/mm) and angle of -k per FFT bin of a P x P patch, in FFT order.

    ``ia0, ia1, fa`` / ``ib0, ib1, fb`` are periodic linear interpolation
    nodes and weights into an ``n_angles`` profile at angles b and b + pi.
    """

    kmag: np.ndarray
    angle: np.ndarray
    mirror: np.ndarray
    ia0: np.ndarray
    ia1: np.ndarray
    fa: np.ndarray
    ib0: np.ndarray
    ib1: np.ndarray
    fb: np.ndarray
    weight: np.ndarray | None = None
    sym: np.ndarray | None = None
    partner: tuple | None = None


def _interp_nodes(angle, n_angles):
    pos = np.mod(angle, 2 * np.pi) / (2 * np.pi) * n_angles
    base = np.floor(pos)
    frac = pos - base
    i0 = base.astype(int) % n_angles
    return i0, (i0 + 1) % n_angles, frac


def frequency_grid(patch_pixels: int, pitch: float, n_angles: int) -> FrequencyGrid:
    k = 2 * np.pi * np.fft.fftfreq(patch_pixels, d=pitch)
    ky, kx = np.meshgrid(k, k, indexing="ij")
    kmag = np.hypot(kx, ky)
    angle = np.mod(np.arctan2(-ky, -kx), 2 * np.pi)
    mirror = (-np.arange(patch_pixels)) % patch_pixels
    ia0, ia1, fa = _interp_nodes(angle, n_angles)
    ib0, ib1, fb = _interp_nodes(angle + np.pi, n_angles)
    return FrequencyGrid(kmag, angle, mirror, ia0, ia1, fa, ib0, ib1, fb)


def half_frequency_grid(patch_pixels: int, pitch: float, n_angles: int) -> FrequencyGrid:
    """Columns ``0..P//2`` of :func:`frequency_grid`, i.e. the ``rfft2`` half plane.

    ``weight`` is 2 for bins whose conjugate twin is not stored and 1 for the
    kx = 0 and Nyquist columns. ``sym`` flags Nyquist bins, whose full-grid
    mirror is not ``-k``; ``partner`` holds interpolation nodes for that mirror.
    """
    p = patch_pixels
    full = frequency_grid(p, pitch, n_angles)
    ph = p // 2 + 1
    cols = slice(0, ph)
    weight = np.full((p, ph), 2.0)
    weight[:, 0] = 1.0
    sym = np.zeros((p, ph), dtype=bool)
    if p % 2 == 0:
        weight[:, -1] = 1.0
        sym[:, -1] = True
        sym[p // 2, :] = True
    rows = full.mirror[:, None]
    mcols = full.mirror[None, :ph]
    partner = tuple(np.ascontiguousarray(a[rows, mcols]) for a in
                    (full.ia0, full.ia1, full.fa, full.ib0, full.ib1, full.fb))
    fields = [np.ascontiguousarray(a[:, cols]) for a in
              (full.kmag, full.angle)]
    nodes = [np.ascontiguousarray(a[:, cols]) for a in
             (full.ia0, full.ia1, full.fa, full.ib0, full.ib1, full.fb)]
    return FrequencyGrid(*fields, full.mirror, *nodes, weight, sym, partner)


def hermitian_symmetrize(a: np.ndarray, mirror: np.ndarray) -> np.ndarray:
    """(a(k) + conj(a(-k))) / 2 over the last two axes.

    Only the Nyquist rows/columns change for transfer functions built here;
    everywhere else the two terms agree already. Self-adjoint, so it is also
    applied to gradients.
    """
    return 0.5 * (a + np.conj(a[..., mirror, :][..., :, mirror]))


@dataclass
class TransferStack:
    """Per-delay transfer functions of one patch (FFT order, not shifted)."""

    delays: np.ndarray
    spectra: np.ndarray
    kmag: np.ndarray
    kangle: np.ndarray
    patch_index: int = 0


def _interp(w, i0, i1, f):
    return w[..., i0] * (1 - f) + w[..., i1] * f


def transfer_functions(w: np.ndarray, delays, fg: FrequencyGrid, return_terms: bool = False):
    """Transfer functions ``(..., M, P, P)`` for profiles ``w`` of shape ``(..., n_angles)``."""
    w = np.asarray(w, dtype=float)
    d = np.asarray(delays, dtype=float).reshape(-1, 1, 1)
    wa = _interp(w, fg.ia0, fg.ia1, fg.fa)[..., None, :, :]
    wb = _interp(w, fg.ib0, fg.ib1, fg.fb)[..., None, :, :]
    e1 = np.exp(-1j * fg.kmag * (d - wa))
    e2 = np.exp(1j * fg.kmag * (d - wb))
    H = hermitian_symmetrize(0.5 * (e1 + e2), fg.mirror)
    if return_terms:
        return H, e1, e2
    return H


def transfer_vjp(G: np.ndarray, e1: np.ndarray, e2: np.ndarray, fg: FrequencyGrid, n_angles: int) -> np.ndarray:
    """Gradient on the profile nodes given ``G`` with dL = Re sum(conj(G) dH).

    Shapes: ``G, e1, e2`` are ``(N, M, P, P)``; returns ``(N, n_angles)``.
    """
    G = hermitian_symmetrize(G, fg.mirror)
    ga = np.real(np.conj(G) * (0.5j * fg.kmag) * e1).sum(axis=-3)
    gb = np.real(np.conj(G) * (-0.5j * fg.kmag) * e2).sum(axis=-3)
    n = ga.shape[0]
    base = (np.arange(n) * n_angles)[:, None]
    out = np.zeros(n * n_angles)
    for nodes, weights, g in ((fg.ia0, 1 - fg.fa, ga), (fg.ia1, fg.fa, ga),
                              (fg.ib0, 1 - fg.fb, gb), (fg.ib1, fg.fb, gb)):
        idx = base + nodes.ravel()[None, :]
        out += np.bincount(idx.ravel(), weights=(g.reshape(n, -1) * weights.ravel()).ravel(),
                           minlength=n * n_angles)
    return out.reshape(n, n_angles)


def transfer_stack(profile: WavefrontProfile, delays, patch_pixels: int, pitch: float,
                   patch_index: int = 0) -> TransferStack:
    fg = frequency_grid(patch_pixels, pitch, len(profile.w))
    H = transfer_functions(profile.w, delays, fg)
    return TransferStack(np.asarray(delays, dtype=float), H, fg.kmag, fg.angle, patch_index)


def psf_from_transfer(spectrum: np.ndarray, pitch: float = 0.1, tol: float = 1e-9) -> RasterGrid:
    """Real PSF from a conjugate-symmetric transfer function.

    The result is ``fftshift``-ed: zero displacement sits at pixel
    ``(P // 2, P // 2)``, which is also the world origin of the returned grid.
    """
    spectrum = np.asarray(spectrum)
    p0, p1 = spectrum.shape
    m0, m1 = (-np.arange(p0)) % p0, (-np.arange(p1)) % p1
    asym = np.max(np.abs(spectrum - np.conj(spectrum[m0][:, m1])))
    scale = max(np.max(np.abs(spectrum)), 1e-300)
    if asym > tol * scale:
        raise ValueError(f"transfer function is not conjugate-symmetric (max asymmetry {asym:.3e})")
    h = np.fft.fftshift(np.fft.ifft2(spectrum))
    grid = GridSpec(p1, p0, pitch, (-(p1 // 2) * pitch, -(p0 // 2) * pitch))
    return RasterGrid(grid, h.real)
