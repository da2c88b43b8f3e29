"""Reduced Hamiltonian flow on the cotangent bundle and its linearization.

Phase-space coordinates are ``y = (q, p)``.  The flow preserves the twisted form
``sigma = dq ^ dp - pi^* Omega^c`` whose matrix is ``[[-Omega, I], [-I, 0]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .exprfield import DomainError
from .geometry import SingularMetricError
from .subriemannian import ReducedSystem


class FlowError(RuntimeError):
    pass


class EnergyDriftError(FlowError):
    pass


class ChartExitError(FlowError):
    pass


DEFAULT_DT = 1e-3
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DRIFT_BUDGET = 1e-6


@dataclass
class CotangentState:
    q: np.ndarray
    p: np.ndarray
    norm2: float
    H: float

    @classmethod
    def make(cls, sys: ReducedSystem, q, p) -> "CotangentState":
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        ginv = sys.metric.inverse(sys.metric.metric(q))
        n2 = float(p @ ginv @ p)
        return cls(q, p, n2, 0.5 * n2 + sys.potential(q))

    @classmethod
    def on_level(cls, sys: ReducedSystem, q, direction) -> "CotangentState":
        """State over ``q`` moving along the tangent ``direction`` with ``H = c0``."""
        q = np.asarray(q, dtype=float)
        n2 = sys.kinetic_norm2(q)
        if n2 <= 0.0:
            raise FlowError(f"energy level c0={sys.c0} lies below the potential at {q}")
        g = sys.metric.metric(q)
        w = np.asarray(direction, dtype=float)
        w = w / np.sqrt(w @ g @ w)
        return cls.make(sys, q, np.sqrt(n2) * (g @ w))

    def renormalized(self, sys: ReducedSystem) -> "CotangentState":
        n2 = sys.kinetic_norm2(self.q)
        if n2 <= 0.0 or self.norm2 <= 0.0:
            raise FlowError("cannot renormalize onto the energy level")
        return CotangentState.make(sys, self.q, self.p * np.sqrt(n2 / self.norm2))

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    def velocity(self, sys: ReducedSystem) -> np.ndarray:
        return sys.metric.inverse(sys.metric.metric(self.q)) @ self.p


def twisted_form(sys: ReducedSystem, q) -> np.ndarray:
    d = sys.dim
    Om, _ = sys.magnetic.combined(np.asarray(q, dtype=float))
    S = np.zeros((2 * d, 2 * d))
    S[:d, :d] = -Om
    S[:d, d:] = np.eye(d)
    S[d:, :d] = -np.eye(d)
    return S


def _local(sys, q):
    try:
        return sys.local(q)
    except (SingularMetricError, DomainError, ValueError) as exc:
        raise ChartExitError(f"trajectory left the chart at q={q}: {exc}") from exc


def vector_field(sys: ReducedSystem, y, L=None) -> np.ndarray:
    d = sys.dim
    q, p = y[:d], y[d:]
    if L is None:
        L = _local(sys, q)
    v = L.ginv @ p
    pdot = -0.5 * np.einsum("j,ijk,k->i", p, L.dginv, p) - L.dW + L.Om @ v
    return np.concatenate([v, pdot])


def linearization(sys: ReducedSystem, y, L=None) -> np.ndarray:
    """Jacobian of :func:`vector_field` at ``y``."""
    d = sys.dim
    q, p = y[:d], y[d:]
    if L is None:
        L = _local(sys, q)
    v = L.ginv @ p
    dv_dq = np.einsum("lij,j->il", L.dginv, p)  # d v_i / d q_l
    A = np.zeros((2 * d, 2 * d))
    A[:d, :d] = dv_dq
    A[:d, d:] = L.ginv
    d2 = L.d2ginv()
    A[d:, :d] = (
        -0.5 * np.einsum("j,lijk,k->il", p, d2, p)
        - L.d2W
        + np.einsum("lij,j->il", L.dOm, v)
        + L.Om @ dv_dq
    )
    A[d:, d:] = -np.einsum("ijk,k->ij", L.dginv, p) + L.Om @ L.ginv
    return A


def hamiltonian_gradient(sys: ReducedSystem, y, L=None) -> np.ndarray:
    d = sys.dim
    q, p = y[:d], y[d:]
    if L is None:
        L = _local(sys, q)
    return np.concatenate([0.5 * np.einsum("j,ijk,k->i", p, L.dginv, p) + L.dW, L.ginv @ p])


def _energy(sys, y):
    d = sys.dim
    return sys.hamiltonian(y[:d], y[d:])


# --------------------------------------------------------------------------
# integrators


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(f, y0, T, method="dop853", dt=DEFAULT_DT, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, t_eval=None):
    """Integrate ``y' = f(t, y)`` from 0 to ``T`` (either sign).

    Fixed-step RK4 returns every step (``t_eval`` ignored); the adaptive path
    returns ``t_eval`` when given, otherwise the solver's own steps.
    """
    y0 = np.asarray(y0, dtype=float)
    if T == 0:
        return np.array([0.0]), y0[None, :]
    if method == "rk4":
        n = max(1, int(round(abs(T) / dt)))
        h = T / n
        ts = h * np.arange(n + 1)
        ys = np.empty((n + 1, len(y0)))
        ys[0] = y0
        y = y0
        for k in range(n):
            y = rk4_step(f, ts[k], y, h)
            if not np.all(np.isfinite(y)):
                raise FlowError(f"integration blew up at t={ts[k + 1]:.6g}")
            ys[k + 1] = y
        return ts, ys
    if method != "dop853":
        raise ValueError(f"unknown integrator {method!r}")
    try:
        sol = solve_ivp(f, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    except (ChartExitError, FlowError):
        raise
    if sol.status != 0:
        raise FlowError(f"adaptive integrator failed: {sol.message}")
    return sol.t, sol.y.T


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    H: np.ndarray
    drift: np.ndarray
    sys: ReducedSystem = field(repr=False)

    @property
    def q(self):
        return self.states[:, : self.sys.dim]

    @property
    def p(self):
        return self.states[:, self.sys.dim :]

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.drift)))

    def state(self, k: int) -> CotangentState:
        d = self.sys.dim
        return CotangentState.make(self.sys, self.states[k, :d], self.states[k, d:])

    def at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolation of the phase state."""
        ts = self.t
        sgn = 1.0 if ts[-1] >= ts[0] else -1.0
        k = int(np.clip(np.searchsorted(sgn * ts, sgn * t) - 1, 0, len(ts) - 2))
        t0, t1 = ts[k], ts[k + 1]
        h = t1 - t0
        s = (t - t0) / h
        y0, y1 = self.states[k], self.states[k + 1]
        f0, f1 = vector_field(self.sys, y0), vector_field(self.sys, y1)
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1

    def rows(self):
        d = self.sys.dim
        for k in range(len(self.t)):
            yield [self.t[k], *self.states[k, :d], *self.states[k, d:], self.H[k], self.drift[k]]

    def header(self):
        d = self.sys.dim
        return ["t", *[f"q{i + 1}" for i in range(d)], *[f"p{i + 1}" for i in range(d)], "H", "drift"]


def flow(
    sys: ReducedSystem,
    lam0: CotangentState,
    T: float,
    method: str = "dop853",
    dt: float = DEFAULT_DT,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    t_eval=None,
    renormalize: bool = False,
    drift_budget: float = DRIFT_BUDGET,
    energy_tol: float = 1e-10,
) -> Trajectory:
    if renormalize:
        lam0 = lam0.renormalized(sys)
    c0 = sys.c0
    scale = max(abs(c0), 1e-300)
    if abs(lam0.H - c0) > energy_tol * max(1.0, abs(c0)):
        raise FlowError(f"initial state is off the energy level: H={lam0.H!r}, c0={c0!r}")
    if lam0.norm2 <= 0.0:
        raise FlowError("initial state lies on the zero section")
    f = lambda t, y: vector_field(sys, y)
    ts, ys = integrate(f, lam0.y, T, method, dt, rtol, atol, t_eval)
    H = np.array([_energy(sys, y) for y in ys])
    drift = (H - c0) / scale
    tr = Trajectory(ts, ys, H, drift, sys)
    if tr.max_drift > drift_budget:
        raise EnergyDriftError(f"relative energy drift {tr.max_drift:.3e} exceeds budget {drift_budget:.1e}")
    return tr


@dataclass
class VariationalSolution:
    t: np.ndarray
    states: np.ndarray
    xi: np.ndarray  # (len(t), 2d, k)

    def final(self):
        return self.states[-1], self.xi[-1]


def _joint_rhs(sys, k):
    d2 = 2 * sys.dim

    def f(t, z):
        y = z[:d2]
        L = _local(sys, y[: sys.dim])
        X = z[d2:].reshape(d2, k)
        return np.concatenate([vector_field(sys, y, L), (linearization(sys, y, L) @ X).ravel()])

    return f


def variational_flow(
    sys: ReducedSystem,
    lam0,
    xi0,
    T: float,
    method: str = "dop853",
    dt: float = DEFAULT_DT,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    t_eval=None,
) -> VariationalSolution:
    """Push tangent vectors ``xi0`` (columns) along the flow from ``lam0``.

    ``lam0`` may be a :class:`CotangentState`, a :class:`Trajectory` (its initial
    state is used) or a raw phase vector.
    """
    if isinstance(lam0, Trajectory):
        y0 = lam0.states[0]
    elif isinstance(lam0, CotangentState):
        y0 = lam0.y
    else:
        y0 = np.asarray(lam0, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    vec = xi0.ndim == 1
    X0 = xi0[:, None] if vec else xi0
    k = X0.shape[1]
    d2 = 2 * sys.dim
    ts, zs = integrate(_joint_rhs(sys, k), np.concatenate([y0, X0.ravel()]), T, method, dt, rtol, atol, t_eval)
    xi = zs[:, d2:].reshape(len(ts), d2, k)
    return VariationalSolution(ts, zs[:, :d2], xi[:, :, 0:1] if vec else xi)


def fundamental_matrix(sys, y0, T, method="rk4", dt=DEFAULT_DT, **kw):
    d2 = 2 * sys.dim
    sol = variational_flow(sys, y0, np.eye(d2), T, method=method, dt=dt, **kw)
    return sol


# --------------------------------------------------------------------------
# representative subspace of the reduced tangent space


def vertical_basis(sys: ReducedSystem, q, p, L=None, seed_vectors=None) -> np.ndarray:
    """g-orthonormal basis (columns) of ``{v : g(p^h, v) = 0}``.

    Gram-Schmidt in the metric of the coordinate vectors (or of
    ``seed_vectors``) after removing the ``p^h`` component.
    """
    if L is None:
        L = _local(sys, q)
    g = L.g
    d = sys.dim
    ph = L.ginv @ p
    ph = ph / np.sqrt(ph @ g @ ph)
    basis = [ph]
    cols = np.eye(d) if seed_vectors is None else np.hstack([np.asarray(seed_vectors, dtype=float).reshape(d, -1), np.eye(d)])
    for e in cols.T:
        u = np.array(e, dtype=float)
        for b in basis:
            u = u - (b @ g @ u) * b
        nrm = np.sqrt(max(u @ g @ u, 0.0))
        if nrm > 1e-8:
            basis.append(u / nrm)
        if len(basis) == d:
            break
    if len(basis) < d:
        raise FlowError("could not complete a basis orthogonal to p")
    return np.array(basis[1:]).T


def reduced_tangent_basis(sys: ReducedSystem, lam: CotangentState, V=None) -> np.ndarray:
    """2m columns spanning ``ker dH  ∩  ker sigma(E, .)`` at ``lam``.

    First the vertical vectors ``(0, g v_a)``, then their horizontal partners
    ``(v_a, Gamma(v_a) p - dW(v_a)/|p|^2 p)``.
    """
    q, p = lam.q, lam.p
    if lam.norm2 <= 0.0:
        raise FlowError("state lies on the zero section")
    L = _local(sys, q)
    if V is None:
        V = vertical_basis(sys, q, p, L)
    d, m = sys.dim, V.shape[1]
    B = np.zeros((2 * d, 2 * m))
    for a in range(m):
        v = V[:, a]
        B[d:, a] = L.g @ v
        B[:d, m + a] = v
        B[d:, m + a] = np.einsum("kij,j,k->i", L.gamma, v, p) - (L.dW @ v) / lam.norm2 * p
    return B


def gauge_projector(sys: ReducedSystem, lam: CotangentState) -> np.ndarray:
    """Projection of ``ker dH`` onto the representative subspace along ``h``."""
    d = sys.dim
    h = vector_field(sys, lam.y)
    row = np.concatenate([lam.p, np.zeros(d)]) / lam.norm2  # -sigma(E, .) / sigma(E, h) up to sign
    return np.eye(2 * d) - np.outer(h, row)
