import numpy as np
import pytest

from orbitforge.curve import (DiscreteCurve, Grid, classify_tails, constant_curve, energy, energy_median, glue,
                              grad_J, grad_norm, h1_distance, h1_metric, hamiltonian_residual, hess_J,
                              normalize_translation, ode_residual, psi_curve, refine, residual_order, reverse,
                              shift_fractional, subsample, tail_indicator, total_energy, translate)
from orbitforge.errors import GridMismatch, GridTooSmall, InvalidGrid, WellMismatch

from conftest import MINIMIZER_ENERGY

LEFT, RIGHT = (-1.0, 0.0), (1.0, 0.0)


@pytest.mark.parametrize("M", [2, 4, 1, 100])
def test_grid_needs_odd_node_count(M):
    with pytest.raises(InvalidGrid):
        Grid(5.0, M)


def test_grid_is_mirror_symmetric():
    g = Grid(10.0, 2001)
    assert g.nodes[g.center] == 0.0
    assert np.array_equal(g.nodes, -g.nodes[::-1])
    assert g.h == pytest.approx(0.01)
    assert g.refined().M == 4001


def test_curve_clamps_ends_and_is_frozen():
    g = Grid(2.0, 11)
    c = DiscreteCurve(g, np.zeros((11, 2)), LEFT, RIGHT)
    assert np.array_equal(c.values[0], LEFT) and np.array_equal(c.values[-1], RIGHT)
    with pytest.raises(ValueError):
        c.values[3, 0] = 1.0


def test_curve_shape_errors():
    with pytest.raises(GridMismatch):
        DiscreteCurve(Grid(2.0, 11), np.zeros((9, 2)), LEFT, RIGHT)
    with pytest.raises(WellMismatch):
        DiscreteCurve(Grid(2.0, 11), np.zeros((11, 2)), (-1.0,), RIGHT)
    a = psi_curve(Grid(2.0, 11), LEFT, RIGHT)
    with pytest.raises(GridMismatch):
        a.same_space(psi_curve(Grid(2.0, 13), LEFT, RIGHT))
    with pytest.raises(WellMismatch):
        a.same_space(reverse(a))


def test_psi_needs_room_for_the_ramp():
    with pytest.raises(GridTooSmall):
        psi_curve(Grid(0.5, 11), LEFT, RIGHT)


def test_constant_curve_has_zero_energy(pdw):
    assert total_energy(pdw, constant_curve(Grid(5.0, 101), RIGHT)) == 0.0


def test_psi_energy_closed_form(pdw):
    # kinetic 1 on [-1, 1] plus the integral of (1 - t^2)^2
    e = energy(pdw, psi_curve(Grid(8.0, 801), LEFT, RIGHT))
    assert e.kinetic == pytest.approx(1.0, rel=1e-12)
    assert e.total == pytest.approx(31.0 / 15.0, abs=1e-4)
    assert e.cells.sum() == pytest.approx(e.total, rel=1e-12)


def test_grad_matches_central_differences_on_random_curves(tc):
    grid = Grid(2.0, 41)
    rng = np.random.default_rng(11)
    base = psi_curve(grid, LEFT, RIGHT)
    eps = 1e-6
    for _ in range(100):
        q = base.with_values(base.values + 0.2 * rng.standard_normal(base.values.shape))
        g = grad_J(tc, q)
        fd = np.zeros_like(g)
        for i in range(1, grid.M - 1):
            for a in range(2):
                up, dn = np.array(q.values), np.array(q.values)
                up[i, a] += eps
                dn[i, a] -= eps
                fd[i, a] = (total_energy(tc, q.with_values(up)) - total_energy(tc, q.with_values(dn))) / (2 * eps)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6
        assert np.all(g[0] == 0) and np.all(g[-1] == 0)


def test_hessian_matches_gradient_differences(tc):
    grid = Grid(2.0, 21)
    rng = np.random.default_rng(5)
    q = psi_curve(grid, LEFT, RIGHT)
    q = q.with_values(q.values + 0.1 * rng.standard_normal(q.values.shape))
    H = hess_J(tc, q).toarray()
    eps = 1e-6
    n = grid.M - 2
    fd = np.zeros((2 * n, 2 * n))
    for col in range(2 * n):
        i, a = divmod(col, 2)
        up, dn = np.array(q.values), np.array(q.values)
        up[i + 1, a] += eps
        dn[i + 1, a] -= eps
        fd[:, col] = ((grad_J(tc, q.with_values(up)) - grad_J(tc, q.with_values(dn)))[1:-1].ravel()) / (2 * eps)
    assert np.allclose(H, fd, atol=1e-6)
    assert np.allclose(H, H.T)


def test_grad_norm_is_ode_residual(tc):
    q = psi_curve(Grid(4.0, 81), LEFT, RIGHT)
    assert grad_norm(tc, q) == pytest.approx(ode_residual(tc, q), rel=1e-9)


def test_h1_metric_riesz_and_coordinates():
    grid = Grid(3.0, 61)
    metric = h1_metric(grid)
    rng = np.random.default_rng(2)
    g = np.zeros((grid.M, 2))
    v = np.zeros((grid.M, 2))
    g[1:-1] = rng.standard_normal((grid.M - 2, 2))
    v[1:-1] = rng.standard_normal((grid.M - 2, 2))
    x = metric.riesz(g)
    assert metric.inner(x, v) == pytest.approx(float(np.sum(g * v)), rel=1e-10)
    y = metric.to_coords(v[1:-1])
    assert float(np.sum(y * y)) == pytest.approx(metric.norm(v) ** 2, rel=1e-10)
    assert h1_metric(grid) is metric


def test_h1_distance_is_a_metric(tc):
    grid = Grid(4.0, 81)
    a = psi_curve(grid, LEFT, RIGHT)
    b = shift_fractional(a, 0.3)
    assert h1_distance(a, a) == 0.0
    assert h1_distance(a, b) == pytest.approx(h1_distance(b, a))
    assert h1_distance(a, b) > 0


def test_translate_matches_fractional_shift_on_nodes():
    grid = Grid(4.0, 81)
    a = psi_curve(grid, LEFT, RIGHT)
    assert np.allclose(translate(a, 3).values, shift_fractional(a, 3 * grid.h).values, atol=1e-12)
    assert translate(a, 0) is a
    assert np.array_equal(translate(a, 1000).values[:-1], np.tile(LEFT, (grid.M - 1, 1)))


def test_energy_median_of_symmetric_profile_is_centre(pdw):
    grid = Grid(8.0, 801)
    q = psi_curve(grid, LEFT, RIGHT)
    assert energy_median(pdw, q) == pytest.approx(grid.center, abs=1e-9)
    moved = translate(q, 40)
    assert energy_median(pdw, moved) == pytest.approx(grid.center + 40, abs=1e-9)
    back = normalize_translation(pdw, moved)
    assert np.allclose(back.values, q.values)
    assert energy_median(pdw, constant_curve(grid, LEFT)) is None


def test_tail_labels(pdw, tw):
    grid = Grid(8.0, 801)
    assert str(classify_tails(pdw, psi_curve(grid, LEFT, RIGHT), 0.05)) == "heteroclinic(0->1)"
    assert str(classify_tails(pdw, constant_curve(grid, RIGHT), 0.05)) == "homoclinic(1)"
    q = psi_curve(grid, LEFT, RIGHT)
    vals = np.array(q.values)
    vals[-60:-1] = [0.0, 1.0]
    label = classify_tails(tw, q.with_values(vals), 0.05)
    assert label.kind == "unresolved"
    assert str(label) == "unresolved"


def test_minimizer_energy_and_residuals(pdw, pdw_minimizer):
    q = pdw_minimizer.curve
    assert pdw_minimizer.energy == pytest.approx(MINIMIZER_ENERGY, abs=1e-3)
    assert ode_residual(pdw, q) < 1e-6
    # the scheme leaves (2/3) h^2 at the front centre for tanh(sqrt(2) t)
    assert hamiltonian_residual(pdw, q) < 1e-4
    assert tail_indicator(pdw, q) < 1e-6


def test_residual_order_of_second_order_scheme(pdw, pdw_minimizer):
    assert 3.5 < residual_order(pdw, pdw_minimizer.curve) < 4.5


def test_subsample_needs_compatible_stride():
    q = psi_curve(Grid(2.0, 21), LEFT, RIGHT)
    assert subsample(q, 2).grid.M == 11
    with pytest.raises(InvalidGrid):
        subsample(q, 3)


def test_refine_keeps_the_coarse_nodes():
    q = psi_curve(Grid(2.0, 21), LEFT, RIGHT)
    fine = refine(q)
    assert fine.grid.M == 41
    assert np.array_equal(fine.values[::2], q.values)


def test_glue_sums_piece_energies(pdw):
    grid = Grid(4.0, 201)
    a = psi_curve(grid, LEFT, RIGHT)
    chain = glue([a, reverse(a), a], plateau=50)
    assert chain.grid.M % 2 == 1
    assert chain.grid.h == pytest.approx(grid.h)
    assert total_energy(pdw, chain) == pytest.approx(3 * total_energy(pdw, a), rel=1e-12)
    with pytest.raises(WellMismatch):
        glue([a, a])


def test_energy_is_invariant_under_endpoint_swap(tc):
    grid = Grid(4.0, 201)
    rng = np.random.default_rng(5)
    base = psi_curve(grid, LEFT, RIGHT)
    for _ in range(20):
        q = base.with_values(base.values + 0.3 * rng.standard_normal(base.values.shape))
        back = reverse(q)
        assert np.array_equal(back.left, RIGHT) and np.array_equal(back.right, LEFT)
        assert abs(total_energy(tc, back) - total_energy(tc, q)) <= 1e-6
        assert np.array_equal(reverse(back).values, q.values)
