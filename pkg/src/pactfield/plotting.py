"""Matplotlib figures written next to the CLI's tabular outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _extent(raster):
    g = raster.grid
    half = g.pitch / 2
    return (g.origin[0] - half, g.origin[0] + (g.width - 0.5) * g.pitch,
            g.origin[1] - half, g.origin[1] + (g.height - 0.5) * g.pitch)


def show_raster(ax, raster, title="", cmap="gray", vmin=None, vmax=None, label=None):
    """Draw a raster in world coordinates (mm), row 0 at the bottom."""
    im = ax.imshow(raster.values, origin="lower", extent=_extent(raster), cmap=cmap, vmin=vmin, vmax=vmax)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if label is not None:
        plt.colorbar(im, ax=ax, label=label, fraction=0.046)
    return im


def save_raster(path, raster, title="", cmap="gray", label=None):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    show_raster(ax, raster, title, cmap, label=label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(path, reports):
    epochs = [r.epoch for r in reports]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.semilogy(epochs, [r.data_term for r in reports], "o-", label="data")
    if any(r.tv_term > 0 for r in reports):
        ax.semilogy(epochs, [r.tv_term for r in reports], "s--", label="TV")
    ax.semilogy(epochs, [r.total for r in reports], "k-", lw=1, label="total")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_panel(path, reference, reports, truth_sos=None):
    """Reference plus one column per method; SOS maps underneath when present."""
    n = len(reports) + 1
    with_sos = truth_sos is not None
    fig, axes = plt.subplots(2 if with_sos else 1, n, figsize=(2.8 * n, 5.6 if with_sos else 3),
                             squeeze=False)
    peak = float(np.max(reference.values))
    show_raster(axes[0, 0], reference, "reference", vmin=0, vmax=peak)
    for ax, rep in zip(axes[0, 1:], reports):
        show_raster(ax, rep.image, f"{rep.method}\n{rep.psnr:.2f} dB / {rep.ssim:.3f}", vmin=0, vmax=peak)
    if with_sos:
        lo, hi = float(truth_sos.values.min()), float(truth_sos.values.max())
        show_raster(axes[1, 0], truth_sos, "true SOS", "viridis", lo, hi)
        for ax, rep in zip(axes[1, 1:], reports):
            if rep.sos is None:
                ax.axis("off")
                continue
            show_raster(ax, rep.sos, f"RMSE {rep.sos_rmse:.1f} m/s", "viridis", lo, hi)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_psf_panel(path, psfs, delays):
    n = len(psfs)
    cols = min(n, 8)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.7 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, psf, d in zip(axes.ravel(), psfs, delays):
        show_raster(ax, psf, f"d={d:+.2f}", cmap="RdBu_r")
        ax.set_xlabel("")
        ax.set_ylabel("")
        ax.tick_params(labelsize=5)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
