import os

os.environ.setdefault("ORBITFORGE_PROGRESS", "false")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from orbitforge.curve import Grid, psi_curve  # noqa: E402
from orbitforge.minimize import MinimizeOptions, MultistartOptions, detect_gap, minimize_energy  # noqa: E402
from orbitforge.mountainpass import PathOptions, RefineOptions, run_mountain_pass  # noqa: E402
from orbitforge.potential import product_double_well, two_channel, triple_well  # noqa: E402

MINIMIZER_ENERGY = 4.0 * np.sqrt(2.0) / 3.0
PLANAR_ENERGY = 8.0 / 3.0


@pytest.fixture(scope="session")
def pdw():
    return product_double_well()


@pytest.fixture(scope="session")
def tc():
    return two_channel()


@pytest.fixture(scope="session")
def tw():
    return triple_well()


@pytest.fixture(scope="session")
def pdw_minimizer(pdw):
    """Converged product double-well heteroclinic on T=10, M=2001."""
    grid = Grid(10.0, 2001)
    res = minimize_energy(pdw, psi_curve(grid, (-1.0, 0.0), (1.0, 0.0)))
    assert res.converged
    return res


@pytest.fixture(scope="session")
def tc_grid():
    return Grid(8.0, 401)


@pytest.fixture(scope="session")
def tc_planar(tc, tc_grid):
    """Minimizer restricted to the u_2 = 0 line: the planar orbit on the pipeline grid."""
    res = minimize_energy(tc, psi_curve(tc_grid, (-1.0, 0.0), (1.0, 0.0)))
    assert res.converged
    return res


@pytest.fixture(scope="session")
def tc_gap(tc, tc_grid):
    return detect_gap(tc, tc_grid, MultistartOptions(n_seeds=32, rng_seed=0), MinimizeOptions())


@pytest.fixture(scope="session")
def tc_mp(tc, tc_gap):
    return run_mountain_pass(tc, tc_gap, 0.05, path_opts=PathOptions(), refine_opts=RefineOptions(), N=17)


def random_heteroclinic(grid, rng):
    """u_1 rises from -1 to 1 through an exact nodal zero; u_2 is a compactly supported bump."""
    t = grid.nodes
    j = grid.center + int(rng.integers(-50, 51))
    width = rng.uniform(1.0, 3.0)
    u1 = np.sin(0.5 * np.pi * np.clip((t - t[j]) / width, -1.0, 1.0))
    tb, wb, amp = rng.uniform(-2.0, 2.0), rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)
    s = (t - tb) / wb
    u2 = np.where(np.abs(s) < 1.0, amp * np.cos(0.5 * np.pi * s) ** 2, 0.0)
    return np.column_stack([u1, u2])


@pytest.fixture
def make_heteroclinic():
    return random_heteroclinic
