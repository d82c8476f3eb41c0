"""Patch spectra, multichannel pseudo-inverse deconvolution and patch merging."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aberration import frequency_grid, transfer_functions, wavefront_profiles
from .beamform import DasStack
from .core import (CircularMask, ConfigurationError, GridSpec, PatchLayout, RasterGrid,
                   RingGeometry)


@dataclass
class PatchSpectra:
    """FFTs of one patch across all delays, ``Y`` of shape ``(M, P, P)``."""

    index: int
    Y: np.ndarray
    offset: tuple[int, int]


def _check_layout(stack: DasStack, layout: PatchLayout):
    if stack.grid != layout.grid:
        raise ConfigurationError("patch layout grid does not match the DAS stack grid")


def stack_spectra(stack: DasStack, layout: PatchLayout, indices=None) -> np.ndarray:
    """Patch FFTs as an array ``(N, M, P, P)``, optionally for a subset of patches."""
    _check_layout(stack, layout)
    indices = range(len(layout)) if indices is None else indices
    p = layout.patch_pixels
    out = np.empty((len(indices), len(stack), p, p), dtype=complex)
    for n, i in enumerate(indices):
        out[n] = np.fft.fft2(stack.images[(slice(None),) + layout.slices(i)])
    return out


def extract_patch_spectra(stack: DasStack, layout: PatchLayout) -> list[PatchSpectra]:
    Y = stack_spectra(stack, layout)
    return [PatchSpectra(i, Y[i], (int(layout.row_starts[i]), int(layout.col_starts[i])))
            for i in range(len(layout))]


def multichannel_deconvolve(Y: np.ndarray, H: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Least-squares clean spectrum from M channels (channel axis = -3).

    ``X = sum_j conj(H_j) Y_j / (sum_j |H_j|^2 + eps * M)``
    """
    Y = np.asarray(Y)
    H = np.asarray(H)
    if Y.shape[-3:] != H.shape[-3:]:
        raise ConfigurationError(f"spectra {Y.shape} and transfer functions {H.shape} differ")
    m = H.shape[-3]
    num = np.sum(np.conj(H) * Y, axis=-3)
    den = np.sum(H.real ** 2 + H.imag ** 2, axis=-3) + eps * m
    return num / den


def deconvolve_vjp(Y, H, X, gX, eps: float = 1e-3):
    """Pull a gradient on the deconvolved spectrum back to ``(Y, H)``.

    Complex gradients follow dL = Re sum(conj(g) dz) for real L. ``X`` must be
    ``multichannel_deconvolve(Y, H, eps)``.
    """
    m = H.shape[-3]
    den = (np.sum(H.real ** 2 + H.imag ** 2, axis=-3) + eps * m)[..., None, :, :]
    gX = gX[..., None, :, :]
    X = X[..., None, :, :]
    gY = gX * H / den
    gH = (np.conj(gX) * Y - 2 * np.real(np.conj(gX) * X) * H) / den
    return gY, gH


@dataclass(frozen=True)
class MergeWindow:
    """Gaussian merge weights over a P x P patch, peaked at the patch centre."""

    fwhm: float
    pitch: float
    patch_pixels: int

    @property
    def sigma_pixels(self) -> float:
        return self.fwhm / (2 * math.sqrt(2 * math.log(2))) / self.pitch

    @property
    def weights(self) -> np.ndarray:
        c = (self.patch_pixels - 1) / 2
        r = np.arange(self.patch_pixels) - c
        g = np.exp(-0.5 * (r / self.sigma_pixels) ** 2)
        return np.outer(g, g)


def merge_patches(patches, layout: PatchLayout, window: MergeWindow) -> RasterGrid:
    """Window-weighted average of overlapping patches; uncovered pixels are 0."""
    wts = window.weights
    acc = np.zeros(layout.grid.shape)
    norm = np.zeros(layout.grid.shape)
    for i, patch in enumerate(patches):
        sl = layout.slices(i)
        acc[sl] += wts * patch
        norm[sl] += wts
    out = np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)
    return RasterGrid(layout.grid, out)


def deconvolve_image(stack: DasStack, sos: RasterGrid, geom: RingGeometry, mask: CircularMask,
                     layout: PatchLayout, eps: float = 1e-3, n_angles: int = 512, step: float = 0.05,
                     fwhm: float = 1.5, v0: float | None = None, chunk: int = 64) -> RasterGrid:
    """Deconvolve every patch of ``stack`` with PSFs predicted from ``sos`` and merge.

    ``v0`` defaults to the stack's beamforming SOS.
    """
    _check_layout(stack, layout)
    v0 = stack.v0 if v0 is None else v0
    fg = frequency_grid(layout.patch_pixels, layout.grid.pitch, n_angles)
    centers = layout.centers
    w = wavefront_profiles(centers, geom, sos, v0, mask, n_angles, step)
    patches = np.empty((len(layout), layout.patch_pixels, layout.patch_pixels))
    for start in range(0, len(layout), chunk):
        idx = range(start, min(start + chunk, len(layout)))
        Y = stack_spectra(stack, layout, idx)
        H = transfer_functions(w[start:start + len(idx)], stack.delays, fg)
        X = multichannel_deconvolve(Y, H, eps)
        patches[start:start + len(idx)] = np.fft.ifft2(X).real
    return merge_patches(patches, layout, MergeWindow(fwhm, layout.grid.pitch, layout.patch_pixels))
