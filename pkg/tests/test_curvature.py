import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from models import (
    BOX,
    HALF_PLANE_REGION,
    TORUS_REGION,
    flat,
    flat_torus_system,
    hyperbolic_system,
    landau_system,
    three_dim_system,
    warped_system,
)
from srcurv.curvature import (
    CurvatureError,
    criterion_pointwise,
    criterion_theorem4,
    curvature_form,
    curvature_matrix,
    curvature_sample,
    curvature_terms,
)
from srcurv.dynamics import CotangentState, vertical_basis
from srcurv.exprfield import ScalarField
from srcurv.geometry import ChartedMetric, Region, k_max, rot
from srcurv.subriemannian import ReducedSystem, riemannian_system


def unit_normal(sys, lam):
    return vertical_basis(sys, lam.q, lam.p)[:, 0]


def test_flat_quadratic_potential_gives_hessian():
    sys = riemannian_system(flat(), 0.5, ScalarField.from_string("0.5*(q1^2 + q2^2)", 2))
    lam = CotangentState.on_level(sys, [0.0, 0.0], [0.3, 1.0])
    assert curvature_form(sys, lam, unit_normal(sys, lam)) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(curvature_matrix(sys, lam), [[1.0]], atol=1e-12)


def test_half_plane_geodesic_case():
    sys = hyperbolic_system(0.0)
    lam = CotangentState.on_level(sys, [0.2, 1.3], [1.0, -0.4])
    assert curvature_form(sys, lam, unit_normal(sys, lam)) == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("b", [0.0, 0.5, 0.9, 1.0, 1.5])
def test_half_plane_constant_field_terms(b):
    sys = hyperbolic_system(b)
    lam = CotangentState.on_level(sys, [0.2, 1.3], [1.0, -0.4])
    t = curvature_terms(sys, lam, unit_normal(sys, lam))
    assert t["riemann"] == pytest.approx(-1.0, abs=1e-8)
    assert t["nabla_J"] == pytest.approx(0.0, abs=1e-8)
    assert t["J_square"] == pytest.approx(0.25 * b * b, abs=1e-12)
    assert t["J_p_square"] == pytest.approx(0.75 * b * b, abs=1e-12)
    assert t["cross"] == t["grad_W_square"] == t["hess_W"] == 0.0
    assert sum(t.values()) == pytest.approx(b * b - 1.0, abs=1e-8)


def test_landau_curvature():
    sys = landau_system(0.7)
    lam = CotangentState.on_level(sys, [0.1, -0.3], [0.2, 1.0])
    assert curvature_form(sys, lam, unit_normal(sys, lam)) == pytest.approx(0.49, abs=1e-12)


def test_free_flat_system_is_flat():
    sys = flat_torus_system()
    lam = CotangentState.on_level(sys, [0.1, -0.3], [0.2, 1.0])
    assert np.all(curvature_matrix(sys, lam) == 0.0)


def test_off_shell_and_non_orthogonal_rejected():
    sys = hyperbolic_system(0.5)
    lam = CotangentState.make(sys, [0.0, 1.0], [2.0, 0.0])
    with pytest.raises(CurvatureError, match="energy level"):
        curvature_form(sys, lam, [0.0, 1.0])
    lam = CotangentState.on_level(sys, [0.0, 1.0], [1.0, 0.0])
    with pytest.raises(CurvatureError, match="orthogonal"):
        curvature_form(sys, lam, [1.0, 1.0])


def test_sample_keeps_term_breakdown():
    sys = warped_system()
    lam = CotangentState.on_level(sys, [0.3, 0.2], [0.6, 0.8])
    s = curvature_sample(sys, lam)
    assert s.matrix.shape == (1, 1)
    assert sum(s.terms[0].values()) == pytest.approx(s.matrix[0, 0], abs=1e-14)
    assert set(s.to_dict()) >= {"q", "p", "matrix", "terms"}


# --------------------------------------------------------------------------
# criteria


def test_pointwise_criterion_models():
    rep = criterion_pointwise(hyperbolic_system(0.5), HALF_PLANE_REGION, 4, 8)
    assert rep.sup == pytest.approx(-0.75, abs=1e-6) and rep.satisfied
    rep = criterion_pointwise(landau_system(1.0), BOX, 4, 8)
    assert rep.sup == pytest.approx(1.0, abs=1e-9) and not rep.satisfied
    rep = criterion_pointwise(flat_torus_system(), TORUS_REGION, 4, 8)
    assert rep.sup == pytest.approx(0.0, abs=1e-12) and not rep.satisfied


def test_threshold_sign_change():
    below = criterion_pointwise(hyperbolic_system(0.99), HALF_PLANE_REGION, 3, 8)
    above = criterion_pointwise(hyperbolic_system(1.01), HALF_PLANE_REGION, 3, 8)
    assert below.margin == pytest.approx(-(0.99**2 - 1), abs=1e-6) and below.satisfied
    assert above.margin == pytest.approx(-(1.01**2 - 1), abs=1e-6) and not above.satisfied


@pytest.mark.parametrize("b", [0.5, 0.99, 1.01])
def test_global_criterion_half_plane(b):
    rep = criterion_theorem4(hyperbolic_system(b), HALF_PLANE_REGION, 3, 8, k_max=-1.0)
    assert rep.sup == pytest.approx(b * b, abs=1e-6)
    assert rep.satisfied == (b < 1.0)
    assert rep.lhs_positive and rep.applicable


def test_global_criterion_computes_k_max():
    rep = criterion_theorem4(hyperbolic_system(0.5), HALF_PLANE_REGION, 3, 8)
    assert rep.k_max == pytest.approx(-1.0, abs=1e-4)


def test_pure_potential_on_flat_torus_is_flagged():
    sys = flat_torus_system(1.0, "0.1*cos(q1)")
    rep = criterion_theorem4(sys, TORUS_REGION, 5, 8, mode="corollary1", k_max=0.0)
    assert not rep.applicable and not rep.satisfied
    assert any("unsatisfiable" in n for n in rep.notes)
    assert rep.sup > 0


def test_free_flat_torus_global_criterion():
    rep = criterion_theorem4(flat_torus_system(), TORUS_REGION, 3, 8, k_max=0.0)
    assert rep.sup == 0.0 and not rep.satisfied and not rep.lhs_positive


def test_field_only_bound_on_surfaces():
    rep = criterion_theorem4(hyperbolic_system(0.5), HALF_PLANE_REGION, 3, 8, mode="corollary2", k_max=-1.0)
    assert rep.sup == pytest.approx(0.25, abs=1e-6)
    # with 2(c0 + W) = 1 the pure-magnetic inequality and the general one coincide on surfaces
    assert abs(rep.extra["discrepancy"]) < 1e-8


def test_field_only_bound_differs_in_higher_dimension():
    sys = three_dim_system(potential="0", c0=0.5)
    box = Region([-0.3] * 3, [0.3] * 3)
    rep = criterion_theorem4(sys, box, 2, 8, mode="corollary2", k_max=-1.0)
    assert np.isfinite(rep.extra["discrepancy"])
    assert abs(rep.extra["discrepancy"]) > 1e-6


def test_curve_base_not_applicable():
    sys = riemannian_system(ChartedMetric.from_strings([["1"]]), 0.5)
    rep = criterion_pointwise(sys, Region([0.0], [1.0]))
    assert not rep.applicable


def test_region_below_potential_rejected():
    sys = flat_torus_system(0.05, "0.1*cos(q1)")
    with pytest.raises(Exception, match="potential"):
        criterion_pointwise(sys, TORUS_REGION, 3, 4)


@pytest.mark.parametrize("b", [0.5, 1.01])
def test_pointwise_and_global_verdicts_agree_when_scalings_coincide(b):
    sys = hyperbolic_system(b)
    km = k_max(sys.metric, HALF_PLANE_REGION).value
    p = criterion_pointwise(sys, HALF_PLANE_REGION, 3, 8)
    g = criterion_theorem4(sys, HALF_PLANE_REGION, 3, 8, k_max=km)
    assert p.satisfied == g.satisfied
    sys = landau_system(1.0)
    p = criterion_pointwise(sys, BOX, 3, 8)
    g = criterion_theorem4(sys, BOX, 3, 8, k_max=0.0)
    assert p.satisfied == g.satisfied == False  # noqa: E712


# --------------------------------------------------------------------------
# properties


def test_polarization_consistency(rng):
    sys = three_dim_system()
    for _ in range(5):
        q = rng.uniform(-0.5, 0.5, 3)
        lam = CotangentState.on_level(sys, q, rng.normal(size=3))
        V = vertical_basis(sys, lam.q, lam.p)
        M = curvature_matrix(sys, lam, V)
        assert np.allclose(M, M.T)
        for a in rng.normal(size=(20, 2)):
            assert curvature_form(sys, lam, V @ a) == pytest.approx(a @ M @ a, abs=1e-10)


def test_homogeneous_models_have_constant_curvature(rng):
    for sys, region in ((hyperbolic_system(0.5), HALF_PLANE_REGION), (landau_system(0.8), BOX)):
        vals = []
        for q in region.sample(rng, 50):
            lam = CotangentState.on_level(sys, q, rng.normal(size=2))
            vals.append(curvature_matrix(sys, lam)[0, 0])
        assert np.ptp(vals) < 1e-8


@given(st.floats(0.1, 3.0), st.integers(0, 2**32 - 1))
def test_magnetic_terms_scale_with_level(t, seed):
    w = warped_system()
    sys = ReducedSystem(w.metric, w.magnetic, ScalarField.constant(0.0, 2), 0.5)
    rng = np.random.default_rng(seed)
    q = rng.uniform(0, 2 * np.pi, 2)
    u = rng.normal(size=2)
    lam = CotangentState.on_level(sys, q, u)
    v = unit_normal(sys, lam)
    base = curvature_terms(sys, lam, v)
    scaled = curvature_terms(sys.with_levels(c=t * sys.levels), lam, v)
    assert scaled["riemann"] == pytest.approx(base["riemann"], abs=1e-10)
    assert scaled["nabla_J"] == pytest.approx(t * base["nabla_J"], abs=1e-10)
    assert scaled["J_square"] == pytest.approx(t * t * base["J_square"], abs=1e-10)
    assert scaled["J_p_square"] == pytest.approx(t * t * base["J_p_square"], abs=1e-10)
    assert scaled["cross"] == base["cross"] == 0.0


@given(st.integers(0, 2**32 - 1))
def test_surface_curvature_matrix_equals_form_on_unit_normal(seed):
    sys = warped_system()
    rng = np.random.default_rng(seed)
    lam = CotangentState.on_level(sys, rng.uniform(0, 6, 2), rng.normal(size=2))
    n = rot(sys.metric, lam.q) @ lam.velocity(sys)
    n = n / np.sqrt(n @ sys.metric.metric(lam.q) @ n)
    assert curvature_matrix(sys, lam)[0, 0] == pytest.approx(curvature_form(sys, lam, n), abs=1e-12)
