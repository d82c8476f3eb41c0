import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pactfield.aberration import frequency_grid, transfer_functions
from pactfield.beamform import DasStack, das, das_stack
from pactfield.core import (CircularMask, ConfigurationError, GridSpec, RingGeometry,
                            make_patch_layout)
from pactfield.deconv import (MergeWindow, deconvolve_image, deconvolve_vjp, extract_patch_spectra,
                              merge_patches, multichannel_deconvolve, stack_spectra)
from pactfield.phantom import PhantomSpec, Point, Vessel, generate_phantom, simulate_signals

RNG = np.random.default_rng(11)


def random_transfer(n=3, m=5, p=16, seed=0):
    rng = np.random.default_rng(seed)
    fg = frequency_grid(p, 0.1, 64)
    w = np.cumsum(rng.normal(0, 0.05, (n, 64)), axis=1)
    return transfer_functions(w, np.linspace(-0.6, 0.6, m), fg)


def cplx(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_pseudo_inverse_exact_without_regulariser():
    H = random_transfer()
    X = cplx(RNG, (3, 16, 16))
    Y = H * X[:, None]
    assert np.max(np.abs(multichannel_deconvolve(Y, H, eps=0.0) - X)) < 1e-6


def test_pseudo_inverse_single_channel_and_shrinkage():
    H = random_transfer(1, 1)
    Y = cplx(RNG, (1, 1, 16, 16))
    X = multichannel_deconvolve(Y, H, 0.5)
    assert np.allclose(X, np.conj(H[:, 0]) * Y[:, 0] / (np.abs(H[:, 0]) ** 2 + 0.5))
    assert np.all(np.abs(X) <= np.abs(multichannel_deconvolve(Y, H, 0.0)) + 1e-12)


def test_pseudo_inverse_shape_mismatch():
    with pytest.raises(ConfigurationError):
        multichannel_deconvolve(np.zeros((2, 8, 8)), np.ones((3, 8, 8)))


def test_vjp_vs_finite_differences():
    rng = np.random.default_rng(2)
    H = random_transfer(2, 4, 8, seed=3)
    Y = cplx(rng, H.shape)
    gX = cplx(rng, (2, 8, 8))
    eps = 1e-2

    def L(Y, H):
        return float(np.real(np.sum(np.conj(gX) * multichannel_deconvolve(Y, H, eps))))

    X = multichannel_deconvolve(Y, H, eps)
    gY, gH = deconvolve_vjp(Y, H, X, gX, eps)
    h = 1e-6
    for name, z, g in (("H", H, gH), ("Y", Y, gY)):
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            for unit in (1, 1j):
                zp, zm = z.copy(), z.copy()
                zp[idx] += h * unit
                zm[idx] -= h * unit
                args_p = (Y, zp) if name == "H" else (zp, H)
                args_m = (Y, zm) if name == "H" else (zm, H)
                d = (L(*args_p) - L(*args_m)) / (2 * h)
                fd[idx] += d if unit == 1 else 1j * d
        assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-4, name


def test_merge_window_sigma():
    w = MergeWindow(1.5, 0.1, 32)
    assert w.sigma_pixels == pytest.approx(6.37, abs=5e-3)
    assert w.weights.max() < 1 and w.weights.min() > 0
    assert np.allclose(w.weights, w.weights.T) and np.allclose(w.weights, w.weights[::-1, ::-1])


@settings(max_examples=15, deadline=None)
@given(st.integers(40, 90), st.sampled_from([1.6, 2.4, 3.2]), st.sampled_from([0.0, 0.5, 0.75]))
def test_extract_merge_identity(n, size, overlap):
    g = GridSpec.centered(n, pitch=0.1)
    lay = make_patch_layout(g, size, overlap)
    img = np.random.default_rng(n).normal(size=g.shape)
    out = merge_patches(lay.extract(img), lay, MergeWindow(1.5, 0.1, lay.patch_pixels))
    assert np.max(np.abs(out.values - img)) < 1e-6


def test_merge_uncovered_is_zero():
    g = GridSpec.centered(48, pitch=0.1)
    lay = make_patch_layout(g, 1.6, 0.5)
    out = merge_patches([np.ones((16, 16))] * 2, lay, MergeWindow(1.5, 0.1, 16))
    assert out.values[0, 0] == 1 and out.values[-1, -1] == 0


def test_spectra_parseval_and_layout_check():
    g = GridSpec.centered(48, pitch=0.1)
    lay = make_patch_layout(g, 1.6, 0.5)
    imgs = np.random.default_rng(4).normal(size=(3,) + g.shape)
    stack = DasStack([-0.1, 0.0, 0.1], imgs, g, 1500.0)
    Y = stack_spectra(stack, lay)
    assert Y.shape == (len(lay), 3, 16, 16)
    for i in (0, 7):
        patch = imgs[(slice(None),) + lay.slices(i)]
        assert np.sum(np.abs(Y[i]) ** 2) / 256 == pytest.approx(np.sum(patch ** 2))
    ps = extract_patch_spectra(stack, lay)
    assert ps[7].offset == (int(lay.row_starts[7]), int(lay.col_starts[7]))
    with pytest.raises(ConfigurationError):
        stack_spectra(stack, make_patch_layout(GridSpec.centered(64, pitch=0.1), 1.6, 0.5))


@pytest.fixture(scope="module")
def uniform_case():
    geom = RingGeometry(256, 50.0)
    big = GridSpec.centered(129, pitch=0.1)
    mask = CircularMask((0, 0), 3.0)
    spec = PhantomSpec([Point((0.4, -0.3)), Vessel([(-1.5, 1.0), (1.0, 1.5)], 0.06)])
    ph = generate_phantom(spec, big, mask, 1500.0)
    sig = simulate_signals(ph, geom)
    g = GridSpec.centered(64, pitch=0.1)
    return sig, g, mask, geom


def test_zero_stack_zero_image(uniform_case):
    _, g, mask, geom = uniform_case
    stack = DasStack([-0.2, 0.0, 0.2], np.zeros((3,) + g.shape), g, 1500.0)
    lay = make_patch_layout(g, 1.6, 0.5)
    assert not deconvolve_image(stack, g.full(1500.0), geom, mask, lay, n_angles=64).values.any()


def test_uniform_sos_matches_das(uniform_case):
    sig, g, mask, geom = uniform_case
    stack = das_stack(sig, g, 1500.0, np.linspace(-0.4, 0.4, 8))
    lay = make_patch_layout(g, 3.2, 0.75)
    img = deconvolve_image(stack, g.full(1500.0), geom, mask, lay, eps=1e-3, n_angles=64).values
    ref = das(sig, g, 1500.0).values
    inner = (slice(16, 48), slice(16, 48))
    c = np.corrcoef(img[inner].ravel(), ref[inner].ravel())[0, 1]
    assert c > 0.95


def test_identity_channel():
    Y = cplx(RNG, (1, 8, 8))
    assert np.allclose(multichannel_deconvolve(Y, np.ones((1, 8, 8)), 0.0), Y[0])


def test_constant_patch_spectrum_at_dc():
    g = GridSpec.centered(32, pitch=0.1)
    stack = DasStack([0.0], np.full((1,) + g.shape, 2.0), g, 1500.0)
    Y = stack_spectra(stack, make_patch_layout(g, 1.6, 0.0))
    assert Y.shape[1] == 1
    assert np.allclose(Y[:, 0, 0, 0], 2.0 * 256)
    Y[:, 0, 0, 0] = 0
    assert np.abs(Y).max() < 1e-9


def test_single_patch_merge_is_patch():
    g = GridSpec.centered(32, pitch=0.1)
    lay = make_patch_layout(g, 3.2, 0.0)
    patch = RNG.normal(size=(32, 32))
    assert np.allclose(merge_patches([patch], lay, MergeWindow(1.5, 0.1, 32)).values, patch)


def test_multichannel_beats_best_single_channel():
    from pactfield.evaluate import psnr
    p, n_ang = 32, 128
    fg = frequency_grid(p, 0.1, n_ang)
    th = 2 * np.pi * np.arange(n_ang) / n_ang
    w = (0.25 + 0.1 * np.cos(th) + 0.05 * np.sin(2 * th))[None]
    x = np.zeros((p, p))
    rng = np.random.default_rng(0)
    x[rng.integers(4, 28, 12), rng.integers(4, 28, 12)] = 1.0
    delays = np.linspace(-0.8, 0.8, 32)
    H = transfer_functions(w, delays, fg)[0]
    Y = H * np.fft.fft2(x)
    best = int(np.argmin(np.abs(delays - 0.25)))
    one = np.fft.ifft2(multichannel_deconvolve(Y[best:best + 1], H[best:best + 1])).real
    many = np.fft.ifft2(multichannel_deconvolve(Y, H)).real
    assert psnr(many, x) > psnr(one, x)
