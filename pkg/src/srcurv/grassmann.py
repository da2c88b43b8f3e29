"""Jacobi curves of the reduced flow and their normal moving frames.

This module is the independent check on the closed-form curvature: it never
calls :mod:`srcurv.curvature`.  The Jacobi curve at ``lam`` is the family of
Lagrangian subspaces ``Z(t) = Phi(t)^{-1} Pi(lam(t))`` pulled back into the
representative subspace at ``lam`` (``Phi`` is the linearized flow and ``Pi``
the vertical subspace ``{(0, g v) : g(p^h, v) = 0}``).  A normal frame
``E' = F, F' = -R E`` is built from ``Z`` and ``R(t)`` is read off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .dynamics import (
    CotangentState,
    _joint_rhs,
    _local,
    gauge_projector,
    rk4_step,
    twisted_form,
    vertical_basis,
)
from .subriemannian import ReducedSystem

ORACLE_DT = 1e-3
ORACLE_HALF_WIDTH = 24
EIG_FLOOR = 1e-10
DARBOUX_LIMIT = 1e-4
# grid points consumed by each differentiation (4th-order stencil + Richardson)
_SHRINK = 4


class OracleError(RuntimeError):
    pass


class NotRegularError(OracleError):
    """The velocity form is not positive definite: the curve is not regular monotone."""


# --------------------------------------------------------------------------
# finite differences on a uniform grid (axis 0), valid on [4, n-4)


def _d1(Y, h):
    n = len(Y)
    k = np.arange(4, n - 4)

    def first(step):
        return (-Y[k + 2 * step] + 8 * Y[k + step] - 8 * Y[k - step] + Y[k - 2 * step]) / (12 * step * h)

    return (16 * first(1) - first(2)) / 15


def _d2(Y, h):
    n = len(Y)
    k = np.arange(4, n - 4)

    def second(step):
        return (
            -Y[k + 2 * step] + 16 * Y[k + step] - 30 * Y[k] + 16 * Y[k - step] - Y[k - 2 * step]
        ) / (12 * (step * h) ** 2)

    return (16 * second(1) - second(2)) / 15


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _skew(A):
    return 0.5 * (A - np.swapaxes(A, -1, -2))


# --------------------------------------------------------------------------
# Jacobi curve


@dataclass
class JacobiCurveSamples:
    sys: ReducedSystem = field(repr=False)
    state: CotangentState
    t: np.ndarray  # grid, t[center] == 0
    center: int
    h: float
    states: np.ndarray  # phase states along the grid
    Z: np.ndarray  # (n, 2d, m)
    Sigma: np.ndarray  # twisted form at the base point
    basis: np.ndarray  # fixed representative basis (2d, 2m)
    lagrangian_residual: float

    @property
    def m(self) -> int:
        return self.Z.shape[2]

    def coordinates(self) -> np.ndarray:
        """``Z(t)`` expressed in the fixed 2m-basis of the representative subspace."""
        coef, *_ = np.linalg.lstsq(self.basis, self.Z.transpose(1, 0, 2).reshape(self.Z.shape[1], -1), rcond=None)
        return coef.reshape(self.basis.shape[1], len(self.t), self.m).transpose(1, 0, 2)


def _trajectory_with_fundamental(sys, y0, n, h):
    """RK4 states and fundamental matrices on ``t = h * k``, ``k = 0..n``."""
    d2 = len(y0)
    f = _joint_rhs(sys, d2)
    z = np.concatenate([y0, np.eye(d2).ravel()])
    out = np.empty((n + 1, len(z)))
    out[0] = z
    for k in range(n):
        z = rk4_step(f, k * h, z, h)
        out[k + 1] = z
    return out[:, :d2], out[:, d2:].reshape(n + 1, d2, d2)


def jacobi_curve(
    sys: ReducedSystem,
    lam: CotangentState,
    dt: float = ORACLE_DT,
    half_width: int = ORACLE_HALF_WIDTH,
    seeds=None,
    t_max: float | None = None,
) -> JacobiCurveSamples:
    """Sample the Jacobi curve on ``t = dt * k``, ``|k| <= half_width``.

    ``seeds`` (columns) choose the vertical frame by Gram-Schmidt; any choice
    gives the same curve of subspaces.  ``t_max`` overrides ``half_width``.
    """
    if t_max is not None:
        half_width = int(np.ceil(t_max / dt)) + 16
    n = half_width
    y0 = lam.y
    fw_states, fw_phi = _trajectory_with_fundamental(sys, y0, n, dt)
    bw_states, bw_phi = _trajectory_with_fundamental(sys, y0, n, -dt)
    states = np.concatenate([bw_states[:0:-1], fw_states])
    phis = np.concatenate([bw_phi[:0:-1], fw_phi])
    t = dt * np.arange(-n, n + 1)
    d = sys.dim
    P = gauge_projector(sys, lam)
    Sigma = twisted_form(sys, lam.q)
    frames = []
    for y in states:
        L = _local(sys, y[:d])
        frames.append((L.g, vertical_basis(sys, y[:d], y[d:], L, seeds)))
    # Gram-Schmidt frames jump when the seed vectors line up with p; rotate each
    # one onto its neighbour (towards t = 0) so the gauge is smooth in t
    for side in (range(n + 1, 2 * n + 1), range(n - 1, -1, -1)):
        for k in side:
            g, V = frames[k]
            prev = frames[k - 1 if k > n else k + 1][1]
            U, _, Wt = np.linalg.svd(V.T @ g @ prev)
            frames[k] = (g, V @ (U @ Wt))
    Z = np.array([P @ np.linalg.solve(phi, np.vstack([np.zeros_like(V), g @ V])) for (g, V), phi in zip(frames, phis)])
    lag = float(np.max(np.abs(np.einsum("kai,ab,kbj->kij", Z, Sigma, Z))))
    from .dynamics import reduced_tangent_basis

    B = reduced_tangent_basis(sys, lam, vertical_basis(sys, lam.q, lam.p, None, seeds))
    return JacobiCurveSamples(sys, lam, t, n, dt, states, Z, Sigma, B, lag)


def velocity_forms(samples: JacobiCurveSamples):
    """``G(t)``, ``Z'(t)``, skew residual and the grid slice they live on."""
    Zd = _d1(samples.Z, samples.h)
    Z = samples.Z[4:-4]
    raw = np.einsum("kai,ab,kbj->kij", Z, samples.Sigma, Zd)
    skew = float(np.max(np.abs(_skew(raw))))
    return _sym(raw), Zd, skew, slice(4, len(samples.t) - 4)


def velocity_form(samples: JacobiCurveSamples, t: float) -> np.ndarray:
    G, _, _, sl = velocity_forms(samples)
    tt = samples.t[sl]
    k = int(np.argmin(np.abs(tt - t)))
    if abs(tt[k] - t) > 0.5 * samples.h:
        raise OracleError(f"t={t} is outside the interior of the sampled grid")
    return G[k]


@dataclass
class NormalFrame:
    t: np.ndarray
    E: np.ndarray
    F: np.ndarray
    R: np.ndarray
    G: np.ndarray
    velocity_skew: float
    N_skew: float
    orthogonality_drift: float
    darboux: float
    lagrangian_residual: float
    center: int

    @property
    def R0(self) -> np.ndarray:
        return self.R[self.center]

    def rows(self):
        m = self.R.shape[1]
        for k, t in enumerate(self.t):
            yield [t, *self.R[k].ravel()]

    def header(self):
        m = self.R.shape[1]
        return ["t", *[f"R{i + 1}{j + 1}" for i in range(m) for j in range(m)]]


def _sqrt_inv(G):
    w, U = np.linalg.eigh(G)
    if np.min(w) <= EIG_FLOOR:
        raise NotRegularError(f"velocity form has eigenvalue {np.min(w):.3e}; curve is not regular monotone")
    return (U / np.sqrt(w)) @ U.T


def normal_frame_curvature(samples: JacobiCurveSamples) -> NormalFrame:
    h = samples.h
    Sigma = samples.Sigma
    G, Zd, vskew, _ = velocity_forms(samples)
    mins = np.linalg.eigvalsh(G)[:, 0]
    if np.min(mins) <= EIG_FLOOR:
        raise NotRegularError(f"velocity form has eigenvalue {np.min(mins):.3e}; curve is not regular monotone")
    D = np.array([_sqrt_inv(g) for g in G])
    S = np.einsum("kai,ab,kbj->kij", Zd, Sigma, Zd)
    Dd = _d1(D, h)
    Dc, Sc = D[4:-4], S[4:-4]
    Dinv = np.linalg.inv(Dc)
    N = Dc @ Sc @ Dc - Dinv @ Dd + Dd @ Dinv
    n_skew = float(np.max(np.abs(_sym(N))))
    N = _skew(N)
    # O' = N O / 2 from the centre outward; midpoint values by cubic interpolation
    nN = len(N)
    c = nN // 2
    m = N.shape[1]
    O = np.full((nN, m, m), np.nan)
    O[c] = np.eye(m)

    def mid(k, s):
        # value halfway between k and k+s (needs k-s .. k+2s)
        return (-N[k - s] + 9 * N[k] + 9 * N[k + s] - N[k + 2 * s]) / 16

    for s in (1, -1):
        k = c
        while min(k - s, k + 2 * s) >= 0 and max(k - s, k + 2 * s) <= nN - 1:
            hh = s * h
            Nm = mid(k, s)
            f0, fm, f1 = 0.5 * N[k], 0.5 * Nm, 0.5 * N[k + s]
            Ok = O[k]
            k1 = f0 @ Ok
            k2 = fm @ (Ok + 0.5 * hh * k1)
            k3 = fm @ (Ok + 0.5 * hh * k2)
            k4 = f1 @ (Ok + hh * k3)
            O[k + s] = Ok + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            k += s
    valid = ~np.isnan(O[:, 0, 0])
    lo, hi = np.argmax(valid), len(valid) - np.argmax(valid[::-1])
    O = O[lo:hi]
    E = samples.Z[8:-8][lo:hi] @ Dc[lo:hi] @ O
    drift = float(np.max(np.abs(np.swapaxes(O, 1, 2) @ O - np.eye(m))))
    F = _d1(E, h)
    Fd = _d2(E, h)
    Ec = E[4:-4]
    R = np.einsum("kai,ab,kbj->kij", F, Sigma, Fd)
    EF = np.einsum("kai,ab,kbj->kij", Ec, Sigma, F)
    FF = np.einsum("kai,ab,kbj->kij", F, Sigma, F)
    darboux = float(max(np.max(np.abs(EF - np.eye(m))), np.max(np.abs(FF))))
    if darboux > DARBOUX_LIMIT:
        raise OracleError(f"Darboux residual {darboux:.2e} exceeds {DARBOUX_LIMIT:.0e}; refine the grid")
    off = 8 + lo + 4
    tt = samples.t[off : off + len(R)]
    center = int(np.argmin(np.abs(tt)))
    return NormalFrame(
        t=tt,
        E=Ec,
        F=F,
        R=_sym(R),
        G=G,
        velocity_skew=vskew,
        N_skew=n_skew,
        orthogonality_drift=drift,
        darboux=darboux,
        lagrangian_residual=samples.lagrangian_residual,
        center=center,
    )


def oracle_curvature(sys: ReducedSystem, lam: CotangentState, dt: float = ORACLE_DT, half_width: int = ORACLE_HALF_WIDTH, seeds=None) -> np.ndarray:
    """``R(0)`` in the g-orthonormal vertical basis used at ``lam``."""
    return normal_frame_curvature(jacobi_curve(sys, lam, dt, half_width, seeds)).R0


# --------------------------------------------------------------------------
# canonical complement


def canonical_complement(sys: ReducedSystem, lam: CotangentState, V=None) -> np.ndarray:
    """Columns ``(v, Gamma(v) p - 1/2 g J v - g(v, J p^h + 2 grad W) / (2|p|^2) p)``."""
    q, p = lam.q, lam.p
    L = _local(sys, q)
    if V is None:
        V = vertical_basis(sys, q, p, L)
    d, m = sys.dim, V.shape[1]
    J = L.J
    ph = L.ginv @ p
    gradW = L.ginv @ L.dW
    out = np.zeros((2 * d, m))
    for a in range(m):
        v = V[:, a]
        out[:d, a] = v
        out[d:, a] = (
            np.einsum("kij,j,k->i", L.gamma, v, p)
            - 0.5 * L.g @ (J @ v)
            - (v @ L.g @ (J @ ph + 2 * gradW)) / (2 * lam.norm2) * p
        )
    return out


def complement_angle(sys: ReducedSystem, lam: CotangentState, dt: float = ORACLE_DT, half_width: int = ORACLE_HALF_WIDTH) -> float:
    """Largest principal angle between the oracle's ``span F(0)`` and the closed form."""
    frame = normal_frame_curvature(jacobi_curve(sys, lam, dt, half_width))
    C = canonical_complement(sys, lam)
    return float(np.max(subspace_angles(frame.F[frame.center], C)))


# --------------------------------------------------------------------------
# verification against the closed form


@dataclass
class PointCheck:
    q: list
    p: list
    oracle: list | None
    formula: list | None
    abs_error: float | None
    rel_error: float | None
    error: str | None = None


@dataclass
class VerificationReport:
    points: list
    max_abs_error: float
    max_rel_error: float
    tol: float
    passed: bool
    failures: int

    def to_dict(self):
        return {
            "points": [vars(p) for p in self.points],
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "passed": self.passed,
            "failures": self.failures,
        }


REL_FLOOR = 1e-6


def relative_error(R_oracle, R_formula) -> tuple[float, float]:
    """Absolute and relative (spectral-norm) disagreement.

    The relative error divides by ``max(|R_formula|, REL_FLOOR)`` so that the
    identically-zero cases fall back to an absolute comparison.
    """
    diff = float(np.linalg.norm(np.atleast_2d(R_oracle - R_formula), 2))
    scale = max(float(np.linalg.norm(np.atleast_2d(R_formula), 2)), REL_FLOOR)
    return diff, diff / scale


def random_states(sys: ReducedSystem, region, n: int, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for q in region.sample(rng, n):
        u = rng.normal(size=sys.dim)
        out.append(CotangentState.on_level(sys, q, u))
    return out


def verify_theorem2(sys: ReducedSystem, points, tol: float = 1e-3, dt: float = ORACLE_DT, half_width: int = ORACLE_HALF_WIDTH) -> VerificationReport:
    from .curvature import curvature_matrix  # the comparison target, imported only here

    checks = []
    for lam in points:
        try:
            V = vertical_basis(sys, lam.q, lam.p)
            Ro = normal_frame_curvature(jacobi_curve(sys, lam, dt, half_width)).R0
            Rf = curvature_matrix(sys, lam, V)
            a, r = relative_error(Ro, Rf)
            checks.append(PointCheck(lam.q.tolist(), lam.p.tolist(), Ro.tolist(), Rf.tolist(), a, r))
        except Exception as exc:  # reported per point
            checks.append(PointCheck(lam.q.tolist(), lam.p.tolist(), None, None, None, None, f"{type(exc).__name__}: {exc}"))
    good = [c for c in checks if c.error is None]
    fails = len(checks) - len(good)
    max_abs = max((c.abs_error for c in good), default=float("nan"))
    max_rel = max((c.rel_error for c in good), default=float("nan"))
    passed = bool(good) and fails == 0 and max_rel <= tol
    return VerificationReport(checks, max_abs, max_rel, tol, passed, fails)
