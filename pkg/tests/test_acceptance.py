"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (visible with or
without ``-s``) before asserting. The 256 x 256 scenario is built once per
session and shared by criteria 7, 8 and 10.
"""
import math
import time

import numpy as np
import pytest

from pactfield.aberration import (frequency_grid, psf_from_transfer, transfer_functions, transfer_vjp,
                                  wavefront_profile)
from pactfield.beamform import das_stack
from pactfield.config import RunConfig
from pactfield.core import (CircularMask, GridSpec, RasterGrid, RingGeometry, make_patch_layout,
                            water_sos)
from pactfield.deconv import MergeWindow, deconvolve_image, deconvolve_vjp, merge_patches, multichannel_deconvolve
from pactfield.evaluate import benchmark, patch_psnr, reference_image, sos_rmse
from pactfield.nfield import init_siren
from pactfield.optimize import JointProblem, TrainConfig
from pactfield.phantom import Disc, PhantomSpec, builtin_spec, generate_phantom, simulate_signals


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


# --- shared 256 x 256 default scenario ----------------------------------------------------

@pytest.fixture(scope="session")
def scenario():
    cfg = RunConfig()
    grid, mask, geom = cfg.grid, cfg.mask, cfg.geometry
    ph = generate_phantom(builtin_spec(cfg.spec, cfg.mask_radius, cfg.seed), grid, mask, cfg.v0)
    sig = simulate_signals(ph, geom)
    ref = reference_image(ph, sig)
    return {"cfg": cfg, "grid": grid, "mask": mask, "geom": geom, "phantom": ph, "signals": sig, "ref": ref}


@pytest.fixture(scope="session")
def bench(scenario):
    s = scenario
    reports = []
    t0 = time.perf_counter()
    out = benchmark(s["signals"], s["phantom"], ["das", "dual_sos", "deconv_true_sos", "nf_apact"], s["cfg"],
                    s["ref"], reports.append)
    return {r.method: r for r in out}, reports, time.perf_counter() - t0


# --- 1 ---------------------------------------------------------------------------

def test_c1_water_sos(verdict):
    a, b = water_sos(26.0), water_sos(31.0)
    verdict(1, abs(a - 1499.4) <= 0.1 and abs(b - 1511.4) <= 0.1, f"26C {a:.3f}  31C {b:.3f} m/s")


# --- 2 ---------------------------------------------------------------------------

def test_c2_parameter_count(verdict):
    n = init_siren().n_params
    verdict(2, n == 4417, f"{n} parameters")


# --- 3 ---------------------------------------------------------------------------

def _chord(p, theta, r):
    ux, uy = math.cos(theta), math.sin(theta)
    b = p[0] * ux + p[1] * uy
    c = p[0] ** 2 + p[1] ** 2 - r * r
    return -b + math.sqrt(b * b - c)  # p inside the disc


def test_c3_disc_wavefront(verdict):
    pitch = 0.0125  # rasterised-edge error at 0.1 mm alone is ~1.2e-3
    grid = GridSpec.centered(1025, pitch=pitch)
    mask = CircularMask((0, 0), 6.0)
    geom = RingGeometry(512, 50.0)
    sos = generate_phantom(PhantomSpec([Disc((0, 0), 5.0, 1550.0)]), grid, mask, 1500.0).sos
    analytic = (1 - 1500 / 1550) * 5.0
    prof = wavefront_profile((0, 0), geom, sos, 1500.0, mask, step=pitch / 2)
    center_err = np.max(np.abs(prof.w - analytic)) / analytic
    off_err = 0.0
    for c in [(2.0, 1.0), (-1.5, 2.0), (-3.1, 2.2)]:
        pr = wavefront_profile(c, geom, sos, 1500.0, mask, step=pitch / 2)
        want = np.array([(1 - 1500 / 1550) * _chord(c, th, 5.0) for th in pr.angles])
        off_err = max(off_err, np.max(np.abs(pr.w - want) / want))
    ok = abs(analytic - 0.16129) < 5e-6 and center_err < 1e-3 and off_err < 1e-3
    verdict(3, ok, f"w={prof.w.mean():.5f} mm, centre rel err {center_err:.2e}, off-centre {off_err:.2e}")


# --- 4 ---------------------------------------------------------------------------

def test_c4_transfer_identities(verdict):
    fg = frequency_grid(32, 0.1, 512)
    e1 = np.abs(transfer_functions(np.zeros(512), [0.0], fg) - 1).max()
    d = np.linspace(-0.8, 0.8, 7)
    e2 = np.abs(transfer_functions(np.zeros(512), d, fg) - np.cos(fg.kmag * d[:, None, None])).max()
    e3 = 0.0
    for w0 in (-0.4, 0.13, 0.5):
        H = transfer_functions(np.full(512, w0), [w0], fg)[0]
        delta = np.zeros((32, 32))
        delta[16, 16] = 1
        e3 = max(e3, np.abs(psf_from_transfer(H, 0.1).values - delta).max())
    verdict(4, max(e1, e2, e3) < 1e-9, f"H=1 {e1:.1e}, cos {e2:.1e}, delta PSF {e3:.1e}")


# --- 5 ---------------------------------------------------------------------------

def _grad_a():
    grid = GridSpec.centered(64, pitch=0.1)
    mask = CircularMask((0, 0), 3.0)
    X, Y = grid.mesh()
    v = 1500 + 40 * np.exp(-((X - 0.7) ** 2 + (Y + 0.4) ** 2) / 3.0)
    v[~mask.pixels(grid)] = 1500
    sos = RasterGrid(grid, v)
    geom = RingGeometry(512, 50.0)
    prof = wavefront_profile((0.35, -0.25), geom, sos, 1500.0, mask, 64, with_jacobian=True)
    J = prof.jacobian.tocsc()
    cols = [p for p in np.flatnonzero(mask.pixels(grid).ravel()) if J[:, p].nnz]
    worst = 0.0
    for p in np.random.default_rng(0).choice(cols, 10, replace=False):
        ws = []
        for s in (1, -1):
            vv = v.ravel().copy()
            vv[p] += s * 0.1
            ws.append(wavefront_profile((0.35, -0.25), geom, sos.with_values(vv.reshape(v.shape)), 1500.0,
                                        mask, 64).w)
        fd = (ws[0] - ws[1]) / 0.2
        col = J[:, p].toarray().ravel()
        worst = max(worst, np.linalg.norm(fd - col) / np.linalg.norm(col))
    return worst


def _grad_b():
    rng = np.random.default_rng(5)
    fg = frequency_grid(16, 0.1, 32)
    w = 0.2 * rng.normal(size=(2, 32))
    d = [-0.3, 0.1, 0.4]
    G = rng.normal(size=(2, 3, 16, 16)) + 1j * rng.normal(size=(2, 3, 16, 16))
    L = lambda w: float(np.real(np.sum(np.conj(G) * transfer_functions(w, d, fg))))
    _, e1, e2 = transfer_functions(w, d, fg, return_terms=True)
    got = transfer_vjp(G, e1, e2, fg, 32)
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += 1e-6
        wm[idx] -= 1e-6
        fd[idx] = (L(wp) - L(wm)) / 2e-6
    return np.linalg.norm(got - fd) / np.linalg.norm(fd)


def _grad_c():
    rng = np.random.default_rng(2)
    fg = frequency_grid(8, 0.1, 64)
    H = transfer_functions(np.cumsum(rng.normal(0, 0.05, (2, 64)), axis=1), [-0.4, 0.0, 0.2, 0.5], fg)
    Y = rng.normal(size=H.shape) + 1j * rng.normal(size=H.shape)
    gX = rng.normal(size=(2, 8, 8)) + 1j * rng.normal(size=(2, 8, 8))
    L = lambda H: float(np.real(np.sum(np.conj(gX) * multichannel_deconvolve(Y, H, 1e-2))))
    _, gH = deconvolve_vjp(Y, H, multichannel_deconvolve(Y, H, 1e-2), gX, 1e-2)
    fd = np.zeros_like(H)
    for idx in np.ndindex(H.shape):
        for unit in (1, 1j):
            Hp, Hm = H.copy(), H.copy()
            Hp[idx] += 1e-6 * unit
            Hm[idx] -= 1e-6 * unit
            fd[idx] += (1 if unit == 1 else 1j) * (L(Hp) - L(Hm)) / 2e-6
    return np.linalg.norm(fd - gH) / np.linalg.norm(gH)


def _grad_d(small):
    cfg = TrainConfig(delays=list(np.linspace(-0.3, 0.3, 4)), n_angles=64, patch_size=3.2, overlap=0.0,
                      lambda_tv=0.0)
    prob = JointProblem(small["stack"], small["geom"], small["mask"], cfg, small["layout"])
    params = init_siren(0, v0=1500.0)
    _, _, grads, _ = prob.evaluate(params)
    arrays = params.arrays()
    rng = np.random.default_rng(0)
    picks = set()
    while len(picks) < 20:
        k = int(rng.integers(len(arrays)))
        picks.add((k, tuple(int(rng.integers(s)) for s in arrays[k].shape)))
    fd, an = [], []
    for k, idx in sorted(picks):
        ap = [a.copy() for a in arrays]
        am = [a.copy() for a in arrays]
        ap[k][idx] += 1e-5
        am[k][idx] -= 1e-5
        fd.append((prob.loss(params.with_arrays(ap)) - prob.loss(params.with_arrays(am))) / 2e-5)
        an.append(grads[k][idx])
    fd, an = np.array(fd), np.array(an)
    return np.linalg.norm(fd - an) / np.linalg.norm(an)


def test_c5_gradients(verdict, small_problem):
    parts = []
    ok = True
    for name, fn, tol in (("a", _grad_a, 1e-3), ("b", _grad_b, 1e-4), ("c", _grad_c, 1e-4),
                          ("d", lambda: _grad_d(small_problem), 1e-3)):
        t0 = time.perf_counter()
        err = fn()
        dt = time.perf_counter() - t0
        ok &= err < tol and dt < 60
        parts.append(f"({name}) {err:.1e} in {dt:.1f}s")
    verdict(5, ok, ", ".join(parts))


# --- 6 ---------------------------------------------------------------------------

def test_c6_pseudo_inverse(verdict):
    rng = np.random.default_rng(1)
    fg = frequency_grid(32, 0.1, 128)
    H = transfer_functions(np.cumsum(rng.normal(0, 0.03, (4, 128)), axis=1), np.linspace(-0.8, 0.8, 32), fg)
    X = np.fft.fft2(rng.normal(size=(4, 32, 32)))
    err = np.abs(multichannel_deconvolve(H * X[:, None], H, eps=0.0) - X).max() / np.abs(X).max()
    verdict(6, err < 1e-6, f"max rel error {err:.1e}")


# --- 7 ---------------------------------------------------------------------------

def test_c7_delay_ablation(verdict, scenario):
    s = scenario
    cfg = s["cfg"]
    layout = make_patch_layout(s["grid"], cfg.patch_size, cfg.overlap)
    mask_px = s["mask"].pixels(s["grid"])
    med, times = [], []
    Ms = [4, 8, 16, 32]
    for M in Ms:
        t0 = time.perf_counter()
        stack = das_stack(s["signals"], s["grid"], cfg.v0, np.linspace(-0.8, 0.8, M))
        img = deconvolve_image(stack, s["phantom"].sos, s["geom"], s["mask"], layout, cfg.eps_deconv,
                               cfg.n_angles, cfg.ray_step, cfg.merge_fwhm)
        times.append(time.perf_counter() - t0)
        med.append(float(np.median(patch_psnr(img, s["ref"], layout, mask_px))))
    slope, icpt = np.polyfit(Ms, times, 1)
    fit = slope * np.array(Ms) + icpt
    lin_err = float(np.max(np.abs(np.array(times) - fit) / fit))
    ok = all(b >= a for a, b in zip(med, med[1:])) and med[-1] - med[0] >= 1.0 and lin_err < 0.2
    verdict(7, ok, "median patch PSNR " + " ".join(f"M{m}:{p:.2f}" for m, p in zip(Ms, med))
            + f" dB; runtime {' '.join(f'{t:.1f}' for t in times)} s, max deviation from linear {lin_err:.0%}")


# --- 8 ---------------------------------------------------------------------------

def test_c8_method_ordering(verdict, scenario, bench):
    by, reports, _ = bench
    p = {k: r.psnr for k, r in by.items()}
    s = scenario
    const = sos_rmse(s["grid"].full(s["cfg"].v0), s["phantom"].sos, s["mask"].pixels(s["grid"]))
    nf_rmse = by["nf_apact"].sos_rmse
    order = p["das"] <= p["dual_sos"] <= p["nf_apact"] <= p["deconv_true_sos"]
    margin = p["nf_apact"] - p["das"] >= 2.0
    rmse_ok = nf_rmse <= 0.75 * const
    loss_ok = reports[-1].total < reports[0].total
    detail = ("PSNR " + " ".join(f"{k}:{v:.2f}" for k, v in p.items())
              + f" dB; nf SOS-RMSE {nf_rmse:.1f} vs constant {const:.1f} m/s"
              + f"; loss {reports[0].total:.3f} -> {reports[-1].total:.3f}")
    verdict(8, order and margin and rmse_ok and loss_ok, detail)


# --- 9 ---------------------------------------------------------------------------

def test_c9_extract_merge_identity(verdict):
    grid = GridSpec.centered(256, pitch=0.1)
    layout = make_patch_layout(grid, 3.2, 0.75)
    img = np.random.default_rng(0).normal(size=grid.shape)
    out = merge_patches(layout.extract(img), layout, MergeWindow(1.5, 0.1, layout.patch_pixels))
    err = np.abs(out.values - img).max()
    verdict(9, err < 1e-6, f"max error {err:.1e}")


# --- 10 ---------------------------------------------------------------------------

def test_c10_runtime(verdict, bench, tmp_path):
    from pactfield.cli import main
    by, _, _ = bench
    nf_time = by["nf_apact"].runtime
    t0 = time.perf_counter()
    d = str(tmp_path)
    small = ["--grid-size", "64", "--mask-radius", "3"]
    codes = [main(["phantom", "--out", d] + small), main(["simulate", "--out", d] + small),
             main(["recon", "nf", "--signals", d + "/signals.sigset", "--out", d] + small),
             main(["eval", "--signals", d + "/signals.sigset", "--out", d] + small)]
    smoke = time.perf_counter() - t0
    ok = nf_time < 1800 and smoke < 120 and codes == [0, 0, 0, 0]
    verdict(10, ok, f"256x256 joint reconstruction {nf_time:.0f} s, 64x64 smoke {smoke:.0f} s")
