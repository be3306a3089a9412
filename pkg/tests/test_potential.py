import numpy as np
import pytest

from orbitforge.errors import ConfigError, NegativeValue, SpecViolation
from orbitforge.potential import (PotentialSpec, SamplingConfig, builtin, builtin_catalog, eval_V, grad_V, hess_V,
                                  verify_assumptions, verify_symmetry)

DEGENERATE = {
    "kind": "polynomial",
    "k": 2,
    "wells": [[-1.0, 0.0], [1.0, 0.0]],
    "terms": [[[0, 0], 1.0], [[2, 0], -2.0], [[4, 0], 1.0], [[0, 4], 1.0]],
    "symmetric": True,
}

# (1 - u1^2)^2 (1 + u1/4) + u2^2: zero at (+-1, 0), not even in u1
LOPSIDED = {
    "kind": "polynomial",
    "k": 2,
    "wells": [[-1.0, 0.0], [1.0, 0.0]],
    "terms": [[[0, 0], 1.0], [[1, 0], 0.25], [[2, 0], -2.0], [[3, 0], -0.5], [[4, 0], 1.0], [[5, 0], 0.25],
              [[0, 2], 1.0]],
}


@pytest.mark.parametrize("spec", builtin_catalog(), ids=lambda s: s.name)
def test_wells_are_zeros(spec):
    assert np.allclose(eval_V(spec, spec.wells_array), 0.0, atol=1e-14)
    assert np.allclose(grad_V(spec, spec.wells_array), 0.0, atol=1e-12)


@pytest.mark.parametrize("spec", builtin_catalog(), ids=lambda s: s.name)
def test_gradient_matches_central_differences(spec):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1.5, 1.5, size=(20, spec.k))
    eps = 1e-6
    for p in pts:
        fd = np.array([(eval_V(spec, p + eps * e) - eval_V(spec, p - eps * e)) / (2 * eps) for e in np.eye(spec.k)])
        assert np.allclose(grad_V(spec, p), fd, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("spec", builtin_catalog(), ids=lambda s: s.name)
def test_hessian_matches_gradient_differences(spec):
    rng = np.random.default_rng(4)
    eps = 1e-6
    for p in rng.uniform(-1.5, 1.5, size=(10, spec.k)):
        fd = np.array([(grad_V(spec, p + eps * e) - grad_V(spec, p - eps * e)) / (2 * eps) for e in np.eye(spec.k)])
        H = hess_V(spec, p)
        assert np.allclose(H, H.T)
        assert np.allclose(H, fd.T, rtol=1e-6, atol=1e-6)


def test_polynomial_table_reproduces_product_double_well():
    poly = PotentialSpec.from_dict({
        "kind": "polynomial", "k": 2, "wells": [[-1, 0], [1, 0]],
        "terms": [[[0, 0], 1.0], [[2, 0], -2.0], [[4, 0], 1.0], [[0, 2], 5.0]],
    })
    ref = builtin("product_double_well", c=5.0)
    pts = np.random.default_rng(0).normal(size=(50, 2))
    assert np.allclose(eval_V(poly, pts), eval_V(ref, pts))
    assert np.allclose(grad_V(poly, pts), grad_V(ref, pts))
    assert np.allclose(hess_V(poly, pts), hess_V(ref, pts))


def test_batch_and_single_point_agree(tc):
    pts = np.array([[0.2, 0.3], [-0.7, 1.1]])
    assert eval_V(tc, pts)[1] == pytest.approx(eval_V(tc, pts[1]))
    assert isinstance(eval_V(tc, pts[0]), float)
    assert hess_V(tc, pts).shape == (2, 2, 2)


def test_negative_value_is_rejected():
    spec = PotentialSpec.from_dict({"kind": "polynomial", "k": 1, "wells": [[-1], [1]],
                                    "terms": [[[2], 1.0], [[0], -1.0]]})
    with pytest.raises(NegativeValue):
        eval_V(spec, [0.0])


def test_builtin_block_merges_params():
    spec = PotentialSpec.from_dict({"kind": "two_channel", "params": {"eps": 0.2}})
    assert spec.kind == "two_channel"
    assert spec.params == {"a": 1.0, "eps": 0.2}
    assert spec.symmetric
    again = PotentialSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


def test_triple_well_block_maps_to_well_product():
    spec = PotentialSpec.from_dict({"kind": "triple_well"})
    assert spec.kind == "well_product"
    assert spec.n_wells == 3


@pytest.mark.parametrize("block", [
    {"kind": "quartic"},
    {"kind": "two_channel", "colour": "red"},
    {"kind": "polynomial", "k": 2, "wells": [[-1, 0], [1, 0]]},
    {"kind": "well_product", "wells": [[0, 0]]},
    {"wells": [[0, 0], [1, 1]]},
])
def test_bad_potential_blocks(block):
    with pytest.raises(ConfigError):
        PotentialSpec.from_dict(block)


def test_unknown_builtin():
    with pytest.raises(ConfigError, match="unknown builtin"):
        builtin("mexican_hat")


def test_well_index(tw):
    assert tw.well_index([0.0, 1.0]) == 2
    assert tw.well_index([0.0, 0.5]) is None


def test_verify_two_channel_passes(tc):
    reports = verify_assumptions(tc, SamplingConfig(n_box=1024))
    assert reports.passed
    assert reports.coercivity.alpha0 > 0
    assert reports.nondegeneracy.min_eigenvalue == pytest.approx(0.2)
    assert reports.nondegeneracy.delta > 0
    assert reports.zero_set.min_off_well > 0
    assert "not certified" in reports.zero_set.coverage
    assert reports.to_dict()["passed"] is True


def test_verify_is_deterministic(tc):
    a = verify_assumptions(tc, SamplingConfig(seed=7, n_box=512)).to_dict()
    b = verify_assumptions(tc, SamplingConfig(seed=7, n_box=512)).to_dict()
    assert a == b


def test_degenerate_well_is_a_spec_violation():
    spec = PotentialSpec.from_dict(DEGENERATE)
    with pytest.raises(SpecViolation) as err:
        verify_assumptions(spec)
    reports = err.value.reports
    assert not reports.nondegeneracy.passed
    assert reports.nondegeneracy.min_eigenvalue == pytest.approx(0.0, abs=1e-12)


def test_coincident_wells_rejected():
    spec = PotentialSpec.from_dict({"kind": "well_product", "wells": [[1, 0], [1, 0]]})
    with pytest.raises(SpecViolation):
        verify_assumptions(spec)


def test_symmetry_audit(tc):
    ok = verify_symmetry(tc)
    assert ok.passed and ok.wells_ok
    assert ok.max_defect <= 1e-12
    bad = verify_symmetry(PotentialSpec.from_dict(LOPSIDED))
    assert bad.wells_ok
    assert not bad.passed
    assert bad.max_defect > 1e-3
