import numpy as np
import pytest

from pactfield.beamform import das_stack
from pactfield.core import CircularMask, GridSpec, RingGeometry, make_patch_layout
from pactfield.phantom import Disc, PhantomSpec, Point, Vessel, generate_phantom, simulate_signals


@pytest.fixture(scope="session")
def small_problem():
    """64 x 64 grid, 2 x 2 patches of 3.2 mm, M = 4 delays, one 1540 m/s inclusion."""
    geom = RingGeometry(256, 50.0)
    grid = GridSpec.centered(64, pitch=0.1)
    mask = CircularMask((0.0, 0.0), 3.0)
    spec = PhantomSpec([Disc((0.4, -0.3), 2.0, 1540.0, 0.5, rim=0.1), Point((-1.2, 1.0)),
                        Point((1.5, 1.4)), Vessel([(-2.0, -1.0), (0.0, -1.8), (1.8, -0.5)], 0.12)])
    ph = generate_phantom(spec, grid, mask, 1500.0)
    sig = simulate_signals(ph, geom)
    stack = das_stack(sig, grid, 1500.0, np.linspace(-0.3, 0.3, 4))
    layout = make_patch_layout(grid, 3.2, 0.0)
    assert len(layout) == 4
    return {"geom": geom, "grid": grid, "mask": mask, "phantom": ph, "signals": sig, "stack": stack,
            "layout": layout}
