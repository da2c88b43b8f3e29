import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from models import BOX, HALF_PLANE_REGION, TORUS_REGION, flat, half_plane, sphere, warped3
from oracles import fd_christoffel, fd_grad, fd_hessian, half_plane_metric, sphere_metric
from srcurv.exprfield import ScalarField
from srcurv.geometry import (
    AreaFormIntensity,
    ChartedMetric,
    DegeneratePlaneError,
    MagneticTensor,
    Region,
    SingularMetricError,
    TwoForm,
    christoffel,
    grad_hess,
    k_max,
    nabla_J,
    riemann,
    rot,
    sectional,
)


def warped3_fn(q):
    x, y, z = q
    return np.array(
        [
            [1 + 0.2 * y * y, 0.1 * np.sin(z), 0.0],
            [0.1 * np.sin(z), np.exp(0.3 * x), 0.05 * x * y],
            [0.0, 0.05 * x * y, 1 + 0.1 * np.cos(x + y)],
        ]
    )


points3 = st.tuples(*[st.floats(-0.8, 0.8)] * 3).map(np.array)


def test_flat_christoffels_vanish():
    for q in ([0.0, 0.0], [3.0, -1.2]):
        assert np.all(christoffel(flat(), q) == 0.0)


def test_half_plane_christoffels():
    G = christoffel(half_plane(), [0.0, 1.0])
    assert G[0, 0, 1] == pytest.approx(-1.0, abs=1e-12)
    assert G[0, 1, 0] == pytest.approx(-1.0, abs=1e-12)
    assert G[1, 0, 0] == pytest.approx(1.0, abs=1e-12)
    assert G[1, 1, 1] == pytest.approx(-1.0, abs=1e-12)
    assert np.allclose(G, fd_christoffel(half_plane_metric, [0.0, 1.0]), atol=1e-8)


def test_conformal_christoffel():
    M = ChartedMetric.conformal("0.1*q1")
    G = christoffel(M, [0.0, 0.0])
    assert G[0, 0, 0] == pytest.approx(0.1, abs=1e-12)
    ref = fd_christoffel(lambda q: np.exp(0.2 * q[0]) * np.eye(2), [0.0, 0.0])
    assert np.allclose(G, ref, atol=1e-8)


def test_singular_metric_rejected():
    M = ChartedMetric.from_strings([["q1", "0"], ["0", "1"]])
    with pytest.raises(SingularMetricError):
        christoffel(M, [0.0, 0.3])


def test_sectional_curvature_models(rng):
    for M, region, K in ((flat(), BOX, 0.0), (half_plane(), HALF_PLANE_REGION, -1.0), (sphere(), BOX, 1.0)):
        for q in region.sample(rng, 10):
            u, v = rng.normal(size=(2, 2))
            assert sectional(M, q, u, v) == pytest.approx(K, abs=1e-6)


def test_degenerate_plane():
    with pytest.raises(DegeneratePlaneError):
        sectional(half_plane(), [0.0, 1.0], [1.0, 2.0], [2.0, 4.0])


def test_grad_hess_quadratic():
    W = ScalarField.from_string("0.5*(q1^2 + q2^2)", 2)
    grad, H = grad_hess(flat(), W, [0.4, -0.7])
    assert np.allclose(grad, [0.4, -0.7], atol=1e-14)
    assert np.allclose(H, np.eye(2), atol=1e-14)
    grad, H = grad_hess(flat(), ScalarField.constant(2.0, 2), [0.4, -0.7])
    assert not grad.any() and not H.any()


def test_grad_hess_half_plane_against_finite_differences():
    W = ScalarField.from_string("q2", 2)
    q = np.array([0.0, 1.0])
    grad, H = grad_hess(half_plane(), W, q)
    assert np.allclose(grad, [0.0, 1.0], atol=1e-12)
    # covariant Hessian: d2W - Gamma^k_ij dW_k with both pieces from finite differences
    w = lambda x: x[1]
    ref = fd_hessian(w, q) - np.einsum("kij,k->ij", fd_christoffel(half_plane_metric, q), fd_grad(w, q))
    assert np.allclose(H, ref, atol=1e-6)


def test_constant_magnetic_tensor_is_parallel_on_flat_space(rng):
    J = MagneticTensor(flat(), [TwoForm(2, {(0, 1): ScalarField.constant(0.7, 2)})], [1.0])
    for _ in range(5):
        q, a, b = rng.normal(size=(3, 2))
        assert np.allclose(nabla_J(flat(), J, q, a, b), 0.0, atol=1e-14)


def test_linear_intensity_derivative():
    J = MagneticTensor(flat(), [AreaFormIntensity(ScalarField.from_string("q1", 2))], [1.0])
    q = np.array([0.3, -0.2])
    assert np.allclose(J.J(q), 0.3 * rot(flat(), q), atol=1e-14)
    for v in ([1.0, 0.0], [0.2, 0.9]):
        assert np.allclose(nabla_J(flat(), J, q, [1.0, 0.0], v), rot(flat(), q) @ v, atol=1e-12)
        assert np.allclose(nabla_J(flat(), J, q, [0.0, 1.0], v), 0.0, atol=1e-12)


def test_rotation_is_parallel_on_half_plane(rng):
    M = half_plane()
    J = MagneticTensor(M, [AreaFormIntensity(ScalarField.constant(1.0, 2))], [1.0])
    for q in HALF_PLANE_REGION.sample(rng, 10):
        assert np.allclose(J.J(q), rot(M, q), atol=1e-12)
        a, b = rng.normal(size=(2, 2))
        assert np.allclose(nabla_J(M, J, q, a, b), 0.0, atol=1e-6)


def test_rot_is_a_positive_quarter_turn(rng):
    M = half_plane()
    for q in HALF_PLANE_REGION.sample(rng, 5):
        g = M.metric(q)
        v = rng.normal(size=2)
        w = rot(M, q) @ v
        assert w @ g @ v == pytest.approx(0.0, abs=1e-12)
        assert w @ g @ w == pytest.approx(v @ g @ v, rel=1e-12)
        assert np.linalg.det(np.column_stack([v, w])) > 0


def test_k_max_models():
    assert k_max(half_plane(), HALF_PLANE_REGION).value == pytest.approx(-1.0, abs=1e-4)
    assert k_max(flat([2 * np.pi, 2 * np.pi]), TORUS_REGION).value == pytest.approx(0.0, abs=1e-9)
    assert k_max(sphere(), BOX).value == pytest.approx(1.0, abs=1e-4)


def test_k_max_empty_region():
    with pytest.raises(Exception):
        k_max(flat(), Region([1.0, 0.0], [0.0, 1.0]))


def test_sphere_christoffels_against_finite_differences(rng):
    for q in BOX.sample(rng, 5):
        assert np.allclose(christoffel(sphere(), q), fd_christoffel(sphere_metric, q), atol=1e-6)


# --------------------------------------------------------------------------
# properties


@given(points3)
def test_christoffels_match_finite_differences(q):
    assert np.allclose(christoffel(warped3(), q), fd_christoffel(warped3_fn, q), atol=1e-6)


@given(points3)
def test_christoffels_symmetric_and_metric_compatible(q):
    M = warped3()
    G = christoffel(M, q)
    assert np.allclose(G, G.transpose(0, 2, 1), atol=1e-14)
    g, dg, _ = M.jet(q)
    # d_k g_ij = Gamma^l_ki g_lj + Gamma^l_kj g_il
    rhs = np.einsum("lki,lj->kij", G, g) + np.einsum("lkj,il->kij", G, g)
    assert np.allclose(dg, rhs, atol=1e-10)
    ref = np.array([(warped3_fn(q + e) - warped3_fn(q - e)) / 2e-5 for e in 1e-5 * np.eye(3)])
    assert np.allclose(rhs, ref, atol=1e-6)


@given(points3)
def test_first_bianchi_identity(q):
    R = riemann(warped3(), q)
    cyc = R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2)
    assert np.max(np.abs(cyc)) < 1e-6
    # R(u, v) = -R(v, u) and g(R(u, v)w, z) = -g(R(u, v)z, w)
    assert np.allclose(R, -R.transpose(0, 1, 3, 2), atol=1e-12)
    low = np.einsum("ml,lkij->mkij", warped3_fn(q), R)
    assert np.allclose(low, -low.transpose(1, 0, 2, 3), atol=1e-6)


@given(points3, st.integers(0, 2**32 - 1))
def test_two_form_tensor_is_skew_adjoint(q, seed):
    M = warped3()
    form = TwoForm(3, {(0, 1): ScalarField.from_string("1 + q3^2", 3), (1, 2): ScalarField.from_string("sin(q1)", 3)})
    J = MagneticTensor(M, [form], [0.8]).J(q)
    v, w = np.random.default_rng(seed).normal(size=(2, 3))
    g = M.metric(q)
    assert abs((J @ v) @ g @ w + v @ g @ (J @ w)) < 1e-10
