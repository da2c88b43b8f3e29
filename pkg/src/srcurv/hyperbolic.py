"""Lyapunov spectra, invariant splittings and cone certificates of the reduced flow.

Tangent vectors are measured in the Sasaki-type norm of the base metric:
``|xi|^2 = g(dq, dq) + g^{-1}(Dp, Dp)`` with ``Dp = dp - Gamma(dq) p`` the
covariant fibre variation.  The norm is invariant under isometries, so on
homogeneous models finite-time rates are free of chart distortion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .curvature import curvature_form
from .dynamics import (
    CotangentState,
    FlowError,
    _local,
    flow,
    gauge_projector,
    integrate,
    reduced_tangent_basis,
    variational_flow,
    vector_field,
)
from .subriemannian import ReducedSystem

LYAP_RTOL = 1e-10
LYAP_ATOL = 1e-12
HYPERBOLIC_THRESHOLD = 0.05
CONVERGENCE_TOL = 1e-3


def sasaki_factor(sys: ReducedSystem, y) -> np.ndarray:
    """Matrix ``K`` with ``|K xi|`` the Sasaki-type norm of ``xi`` at ``y``."""
    d = sys.dim
    q, p = y[:d], y[d:]
    L = _local(sys, q)
    C = np.einsum("kij,k->ij", L.gamma, p)
    Lg = np.linalg.cholesky(L.g)
    Li = np.linalg.cholesky(L.ginv)
    K = np.zeros((2 * d, 2 * d))
    K[:d, :d] = Lg.T
    K[d:, :d] = -Li.T @ C
    K[d:, d:] = Li.T
    return K


@dataclass
class LyapunovReport:
    exponents: np.ndarray
    renorm_dt: float
    T: float
    history_t: np.ndarray
    history: np.ndarray  # running estimates, one row per renormalization
    converged: bool
    sum_residual: float
    pair_residual: float
    pattern_ok: bool | None = None

    @property
    def top(self) -> float:
        return float(self.exponents[0])

    def to_dict(self):
        return {
            "exponents": self.exponents.tolist(),
            "renorm_dt": self.renorm_dt,
            "T": self.T,
            "converged": self.converged,
            "sum_residual": self.sum_residual,
            "pair_residual": self.pair_residual,
            "pattern_ok": self.pattern_ok,
        }

    def rows(self):
        for t, row in zip(self.history_t, self.history):
            yield [t, *row]

    def header(self):
        return ["t", *[f"lambda{i + 1}" for i in range(self.history.shape[1])]]


def _propagate(sys, y, X, dt, rtol=LYAP_RTOL, atol=LYAP_ATOL):
    sol = variational_flow(sys, y, X, dt, method="dop853", rtol=rtol, atol=atol, t_eval=[dt])
    return sol.states[-1], sol.xi[-1]


def _advance(sys, y, X, dt, rtol=LYAP_RTOL, atol=LYAP_ATOL):
    """Propagate, then re-center the chart if the system provides an isometry."""
    y, X = _propagate(sys, y, X, dt, rtol, atol)
    if sys.recenter is None:
        return y, X, None
    y, Tm = sys.recenter(y)
    return y, Tm @ X, Tm


def initial_frame(sys: ReducedSystem, lam: CotangentState, seed: int = 0) -> np.ndarray:
    """Sasaki-orthonormal frame ``[m reduced, flow, fibre scaling, m reduced]``."""
    d = sys.dim
    y = lam.y
    B = reduced_tangent_basis(sys, lam)
    rot, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(B.shape[1], B.shape[1])))
    euler = np.concatenate([np.zeros(d), lam.p])
    Br = B @ rot
    m = Br.shape[1] // 2
    X = np.column_stack([Br[:, :m], vector_field(sys, y), euler, Br[:, m:]])
    Q, _ = np.linalg.qr(sasaki_factor(sys, y) @ X)
    return Q


def lyapunov(
    sys: ReducedSystem,
    lam0: CotangentState,
    T: float = 50.0,
    renorm_dt: float = 0.5,
    rtol: float = LYAP_RTOL,
    atol: float = LYAP_ATOL,
    seed: int = 0,
    transient: float | None = None,
) -> LyapunovReport:
    """QR estimate of the full ``2(m+1)`` exponent spectrum along ``lam0``.

    The initial frame follows the expected descending order ``(+, 0, 0, -)``:
    half of a seeded random basis of the reduced subspace, the flow direction,
    the fibre-scaling direction (transversal to the energy level), then the
    other half.  Seeding the neutral slots with the exact neutral directions
    keeps polynomial growth of sheared energy perturbations out of the zero
    exponents.  Stretches during the first
    ``transient`` time units (default ``0.2 T``) are discarded so the frame can
    align with the Oseledets directions; the average runs over the rest of
    ``[0, T]``.
    """
    d2 = 2 * sys.dim
    n = max(1, int(round(T / renorm_dt)))
    h = T / n
    if transient is None:
        transient = 0.2 * T
    n_skip = min(int(round(transient / h)), n - 1)
    y = lam0.y.copy()
    Q = initial_frame(sys, lam0, seed)
    sums = np.zeros(d2)
    hist = np.empty((n - n_skip, d2))
    for k in range(n):
        X = np.linalg.solve(sasaki_factor(sys, y), Q)
        y, X, _ = _advance(sys, y, X, h, rtol, atol)
        Q, R = np.linalg.qr(sasaki_factor(sys, y) @ X)
        diag = np.diag(R)
        if np.any(diag == 0) or not np.all(np.isfinite(diag)):
            raise FlowError("variational frame collapsed")
        if k >= n_skip:
            j = k - n_skip
            sums += np.log(np.abs(diag))
            hist[j] = sums / ((j + 1) * h)
    t_hist = h * np.arange(n_skip + 1, n + 1)
    ex = np.sort(hist[-1])[::-1]
    tail = hist[t_hist >= 0.8 * T]
    converged = bool(len(tail) > 1 and np.max(np.ptp(tail, axis=0)) < CONVERGENCE_TOL)
    pair = float(np.max(np.abs(ex + ex[::-1])))
    pattern = None
    if sys.dim == 2:
        # neutral directions grow polynomially, which biases their estimates by ~log(T)/T
        zero_tol = 0.02 + np.log1p(T) / (T - n_skip * h)
        pattern = bool(abs(ex[0] + ex[3]) < 0.02 and abs(ex[1]) < zero_tol and abs(ex[2]) < zero_tol)
    return LyapunovReport(ex, renorm_dt, T, t_hist, hist, converged, float(abs(np.sum(ex))), pair, pattern)


# --------------------------------------------------------------------------
# cone certificate (surfaces)


@dataclass
class ConeCertificate:
    trajectory_id: str
    passed: bool
    delta: float
    verified_interval: tuple
    cone_slope_min: float
    fail_time: float | None = None
    reason: str = ""
    R_min: float | None = None
    R_max: float | None = None

    def to_dict(self):
        return dict(vars(self), verified_interval=list(self.verified_interval))


def _unit_normal(sys, lam):
    L = _local(sys, lam.q)
    ph = L.ginv @ lam.p
    # rotate p^h by +pi/2 in a g-orthonormal frame
    g = L.g
    sq = np.sqrt(np.linalg.det(g))
    rot = -L.ginv @ np.array([[0.0, sq], [-sq, 0.0]])
    v = rot @ ph
    return v / np.sqrt(v @ g @ v)


def curvature_along(sys: ReducedSystem, states: np.ndarray) -> np.ndarray:
    """Scalar curvature form on the unit normal along a surface trajectory."""
    d = sys.dim
    out = np.empty(len(states))
    for k, y in enumerate(states):
        lam = CotangentState.make(sys, y[:d], y[d:])
        out[k] = curvature_form(sys, lam, _unit_normal(sys, lam), check=False)
    return out


def cone_certificate(sys: ReducedSystem, lam0: CotangentState, T: float = 10.0, dt: float = 1e-2) -> ConeCertificate:
    """Check that the cone ``{y y' > 0}`` of ``y'' = -R(t) y`` is invariant and expanding."""
    if sys.dim != 2:
        raise ValueError("cone certificates are implemented for surfaces (m = 1)")
    tid = f"q={np.round(lam0.q, 12).tolist()},p={np.round(lam0.p, 12).tolist()}"
    n = max(1, int(round(T / dt)))
    h = T / n
    tr = flow(sys, lam0, T, method="rk4", dt=h / 2)
    R = curvature_along(sys, tr.states)  # at half steps
    Rg = R[::2]
    pos = np.nonzero(Rg >= 0.0)[0]
    if len(pos):
        k = int(pos[0])
        return ConeCertificate(tid, False, float("nan"), (0.0, k * h), float("nan"), k * h,
                               f"curvature form is nonnegative at t={k * h:.6g} (R={Rg[k]:.6g})",
                               float(np.min(R)), float(np.max(R)))
    if np.any(R >= 0.0):
        k = int(np.nonzero(R >= 0.0)[0][0])
        return ConeCertificate(tid, False, float("nan"), (0.0, k * h / 2), float("nan"), k * h / 2,
                               "curvature form is nonnegative between grid points", float(np.min(R)), float(np.max(R)))
    delta = float(np.sqrt(np.min(-R)))
    z = np.array([1.0, np.sqrt(-R[0])])
    Q = z[0] * z[1]
    slope_min = z[1] / z[0]
    for k in range(n):
        r0, rm, r1 = R[2 * k], R[2 * k + 1], R[2 * k + 2]
        f = lambda r, z: np.array([z[1], -r * z[0]])
        k1 = f(r0, z)
        k2 = f(rm, z + 0.5 * h * k1)
        k3 = f(rm, z + 0.5 * h * k2)
        k4 = f(r1, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Qn = z[0] * z[1]
        if Qn <= 0:
            return ConeCertificate(tid, False, delta, (0.0, k * h), slope_min, (k + 1) * h, "cone left", float(np.min(R)), float(np.max(R)))
        if Qn < Q * np.exp(delta * h):
            return ConeCertificate(tid, False, delta, (0.0, k * h), slope_min, (k + 1) * h,
                                   "expansion below the certified rate", float(np.min(R)), float(np.max(R)))
        Q = Qn
        scale = abs(z[0])
        z = z / scale
        Q = Q / scale**2
        slope_min = min(slope_min, z[1] / z[0])
    return ConeCertificate(tid, True, delta, (0.0, float(T)), float(slope_min), None, "", float(np.min(R)), float(np.max(R)))


# --------------------------------------------------------------------------
# invariant splitting


@dataclass
class SplittingReport:
    detected: bool
    message: str
    E_plus: np.ndarray | None = None
    E_minus: np.ndarray | None = None
    delta_plus: float | None = None
    delta_minus: float | None = None
    angle: float | None = None
    invariance_residual: dict = field(default_factory=dict)
    growth_bounds: dict = field(default_factory=dict)

    def to_dict(self):
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "detected": self.detected,
            "message": self.message,
            "E_plus": arr(self.E_plus),
            "E_minus": arr(self.E_minus),
            "delta_plus": self.delta_plus,
            "delta_minus": self.delta_minus,
            "angle": self.angle,
            "invariance_residual": self.invariance_residual,
            "growth_bounds": self.growth_bounds,
            "note": "finite-time constants depend on the chosen norm; rates are asymptotic",
        }


def _lam(sys, y):
    d = sys.dim
    return CotangentState.make(sys, y[:d], y[d:])


def _orbit(sys, y, T, renorm_dt):
    """States every ``renorm_dt`` along the flow for time ``T`` (either sign).

    Each state is stored in its own (possibly re-centered) chart; ``maps[k]``
    is the tangent map of the chart change applied after step ``k``.
    """
    n = max(1, int(round(abs(T) / renorm_dt)))
    h = T / n
    f = lambda t, z: vector_field(sys, z)
    states, maps = [np.array(y, dtype=float)], []
    for _ in range(n):
        _, ys = integrate(f, states[-1], h, "dop853", rtol=LYAP_RTOL, atol=LYAP_ATOL, t_eval=[h])
        z, Tm = ys[-1], np.eye(len(y))
        if sys.recenter is not None:
            z, Tm = sys.recenter(z)
        states.append(z)
        maps.append(Tm)
    return states, maps, h


def _iterate_back(sys, states, maps, h, X):
    """Subspace iteration along a stored orbit, from its far end back to its start.

    The orbit was generated with step ``h``; the iteration runs with ``-h`` and
    re-anchors at every stored state, so the result lives exactly at
    ``states[0]`` and integration error is not amplified along the way.
    Returns the gauge-projected subspace there and its mean log stretch rate
    over the second half of the run (the first half absorbs the transient of
    the random start).
    """
    logs = []
    for k in range(len(states) - 1, 0, -1):
        _, X = _propagate(sys, states[k], X, -h)
        X = np.linalg.solve(maps[k - 1], X)
        y = states[k - 1]
        X = gauge_projector(sys, _lam(sys, y)) @ X
        K = sasaki_factor(sys, y)
        Q, R = np.linalg.qr(K @ X)
        logs.append(np.mean(np.log(np.abs(np.diag(R)))))
        X = np.linalg.solve(K, Q)
    return X, float(np.mean(logs[len(logs) // 2 :]) / abs(h))


def _sasaki_angle(sys, y, A, B) -> float:
    K = sasaki_factor(sys, y)
    return float(np.max(subspace_angles(K @ A, K @ B)))


def splitting(sys: ReducedSystem, lam0: CotangentState, T: float = 40.0, renorm_dt: float = 0.5, t_check: float = 1.0, seed: int = 0) -> SplittingReport:
    """Unstable/stable subspaces at ``lam0`` by forward/backward subspace iteration.

    ``E+`` comes from pushing a random reduced subspace forward from
    ``lam0``'s past, ``E-`` from pulling one back from its future.  Invariance
    is checked by pushing ``E±(0)`` to ``±t_check`` and comparing with fresh,
    independent estimates computed there.  Rates are averaged over the second
    half of the window, where linear (parabolic) growth still shows up as
    ``2 log 2 / T``; the default ``T = 40`` keeps that below the detection
    threshold.
    """
    m = sys.dim - 1
    rng = np.random.default_rng(seed)

    def estimate(y, direction):
        # E+ (direction=+1) uses the past orbit, E- the future orbit
        states, maps, h = _orbit(sys, y, -direction * T, renorm_dt)
        B = reduced_tangent_basis(sys, _lam(sys, states[-1]))
        return _iterate_back(sys, states, maps, h, B @ rng.normal(size=(B.shape[1], m)))

    Ep, dplus = estimate(lam0.y, +1)
    Em, dminus = estimate(lam0.y, -1)
    if not (dplus > HYPERBOLIC_THRESHOLD and dminus > HYPERBOLIC_THRESHOLD):
        return SplittingReport(False, "no hyperbolic splitting detected", delta_plus=float(dplus), delta_minus=float(dminus))
    angle = _sasaki_angle(sys, lam0.y, Ep, Em)

    def check(E, sign):
        y1, pushed = _propagate(sys, lam0.y, E, sign * t_check)
        pushed = gauge_projector(sys, _lam(sys, y1)) @ pushed
        direct, _ = estimate(y1, sign)
        K0, K1 = sasaki_factor(sys, lam0.y), sasaki_factor(sys, y1)
        factor = np.linalg.norm(K1 @ pushed[:, 0]) / np.linalg.norm(K0 @ E[:, 0])
        return _sasaki_angle(sys, y1, pushed, direct), float(factor)

    res_plus, grow = check(Ep, +1)
    res_minus, shrink = check(Em, -1)
    return SplittingReport(
        True,
        "hyperbolic splitting detected",
        Ep,
        Em,
        float(dplus),
        float(dminus),
        angle,
        {"plus": res_plus, "minus": res_minus, "t_check": t_check},
        {"expansion_factor_plus": float(grow), "expansion_factor_minus_backward": float(shrink)},
    )
