import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pactfield import _kernels
from pactfield.beamform import BodyModel, DasStack, das, das_stack, dual_sos_das, parse_delays
from pactfield.core import CircularMask, ConfigurationError, DomainError, GridSpec, RingGeometry
from pactfield.phantom import Disc, PhantomSpec, Point, SignalSet, generate_phantom, simulate_signals

GEOM = RingGeometry(256, 50.0)
GRID = GridSpec.centered(41, pitch=0.1)
MASK = CircularMask((0, 0), 6.0)


@pytest.fixture(scope="module")
def center_signals():
    ph = generate_phantom(PhantomSpec([Point((0, 0))]), GridSpec.centered(129), MASK, 1500.0)
    return simulate_signals(ph, GEOM)


def peak(img):
    r, c = np.unravel_index(np.argmax(np.abs(img.values)), img.values.shape)
    return img.grid.world(c, r)


def test_point_focus_at_center(center_signals):
    x, y = peak(das(center_signals, GRID, 1500.0, 0.0))
    assert (x, y) == pytest.approx((0.0, 0.0), abs=1e-9)


def test_positive_delay_makes_ring(center_signals):
    img = das(center_signals, GRID, 1500.0, 0.5)
    x, y = peak(img)
    assert np.hypot(x, y) == pytest.approx(0.5, abs=0.1)
    X, Y = GRID.mesh()
    ring = np.abs(np.hypot(X, Y) - 0.5) < 0.05
    assert np.abs(img.values[ring]).mean() > 2 * abs(img.values[20, 20])


def test_zero_signals_zero_image():
    sig = SignalSet(GEOM, 25e-9, 3e-5, np.zeros((GEOM.n_transducers, 100)), 1500.0)
    assert not das(sig, GRID, 1500.0).values.any()


def test_stack_matches_single(center_signals):
    delays = [-0.3, 0.0, 0.2]
    st_ = das_stack(center_signals, GRID, 1500.0, delays)
    assert len(st_) == 3
    for j, d in enumerate(delays):
        assert np.array_equal(st_[j].values, das(center_signals, GRID, 1500.0, d).values)
    one = das_stack(center_signals, GRID, 1500.0, [0.0])
    assert np.array_equal(one.images[0], das(center_signals, GRID, 1500.0).values)


def test_stack_32():
    assert len(parse_delays("-0.8:0.8:32")) == 32
    assert np.allclose(parse_delays("-0.8:0.8:32"), np.linspace(-0.8, 0.8, 32))
    assert parse_delays("0.1:0.1:1").tolist() == [0.1]


@pytest.mark.parametrize("text", ["1:2", "a:b:c", "0.5:0.1:4", "0:1:0"])
def test_parse_delays_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_delays(text)


def test_stack_invariants():
    with pytest.raises(ConfigurationError):
        DasStack([0.1, 0.0], np.zeros((2,) + GRID.shape), GRID, 1500.0)
    with pytest.raises(ConfigurationError):
        DasStack([0.0], np.zeros((2,) + GRID.shape), GRID, 1500.0)


def test_das_linear():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(32, 300))
    b = rng.normal(size=(32, 300))
    g = RingGeometry(32, 20.0)
    t0 = 1.0e-5
    s = lambda d: SignalSet(g, 25e-9, t0, d, 1500.0)
    grid = GridSpec.centered(16, pitch=0.2)
    lhs = das(s(2 * a - 3 * b), grid, 1500.0, 0.1).values
    rhs = 2 * das(s(a), grid, 1500.0, 0.1).values - 3 * das(s(b), grid, 1500.0, 0.1).values
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_delay_shifts_arc_one_pixel(center_signals):
    data = np.zeros_like(center_signals.data)
    data[0] = center_signals.data[0]  # transducer at (50, 0)
    single = SignalSet(GEOM, center_signals.dt, center_signals.t0, data, 1500.0)
    row = GRID.height // 2
    cols = []
    for d in (0.0, 0.1, 0.2):
        img = das(single, GRID, 1500.0, d).values
        cols.append(int(np.argmax(np.abs(img[row]))))
    assert cols[0] - cols[1] == 1 and cols[1] - cols[2] == 1


def test_nonpositive_v0(center_signals):
    with pytest.raises(DomainError):
        das(center_signals, GRID, 0.0)
    with pytest.raises(DomainError):
        dual_sos_das(center_signals, GRID, -1.0, BodyModel((0, 0), 2.0, 1550.0))


def test_dual_sos_degenerate_body(center_signals):
    a = dual_sos_das(center_signals, GRID, 1500.0, BodyModel((0.3, 0.1), 3.0, 1500.0)).values
    b = das(center_signals, GRID, 1500.0).values
    assert np.allclose(a, b, atol=1e-9 * np.abs(b).max())


def test_dual_sos_focuses_inside_body():
    ph = generate_phantom(PhantomSpec([Disc((0, 0), 5.0, 1550.0), Point((0, 0))], antialias=False),
                          GridSpec.centered(129), MASK, 1500.0)
    sig = simulate_signals(ph, GEOM)
    img = dual_sos_das(sig, GRID, 1500.0, BodyModel((0, 0), 5.0, 1550.0))
    assert peak(img) == pytest.approx((0.0, 0.0), abs=1e-9)
    plain = das(sig, GRID, 1500.0)
    assert np.abs(img.values).max() > 2 * np.abs(plain.values).max()


def test_chord_through_center():
    assert _kernels.chord_in_disc(-10.0, 0.3, 10.0, 0.3, 1.0, 0.3, 2.5) == pytest.approx(5.0)
    assert _kernels.chord_in_disc(-10.0, 5.0, 10.0, 5.0, 0.0, 0.0, 2.0) == 0.0


@given(st.floats(-3, 3), st.floats(0.1, 4))
def test_chord_analytic(offset, r):
    got = _kernels.chord_in_disc(-20.0, offset, 20.0, offset, 0.0, 0.0, r)
    want = 2 * np.sqrt(max(r * r - offset * offset, 0.0))
    assert got == pytest.approx(want, abs=1e-9)


def test_body_model_validation():
    with pytest.raises(ConfigurationError):
        BodyModel((0, 0), 0.0, 1550.0)
    with pytest.raises(ConfigurationError):
        BodyModel((0, 0), 1.0, 1200.0)
