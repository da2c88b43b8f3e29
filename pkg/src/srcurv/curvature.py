"""Closed-form reduced curvature form and the hyperbolicity criteria built on it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conventions
from .dynamics import CotangentState, vertical_basis
from .geometry import Region, k_max as compute_k_max, nabla_J_from, riemann
from .subriemannian import ReducedSystem

TERM_NAMES = (
    "riemann",
    "nabla_J",
    "J_square",
    "J_p_square",
    "cross",
    "grad_W_square",
    "hess_W",
)
ORTHO_TOL = 1e-10
SHELL_TOL = 1e-8


class CurvatureError(ValueError):
    pass


class _PointData:
    """Everything the closed-form curvature needs at one chart point."""

    def __init__(self, sys: ReducedSystem, q):
        L = sys.local(q)
        self.g = L.g
        self.ginv = L.ginv
        self.gamma = L.gamma
        self.W = L.W
        self.J = L.J
        # dJ[k] = d_k J = -(d_k g^{-1}) Omega - g^{-1} d_k Omega
        self.dJ = -(np.einsum("mab,bc->mac", L.dginv, L.Om) + np.einsum("ab,mbc->mac", L.ginv, L.dOm))
        self.gradW = L.ginv @ L.dW
        self.hessW = L.d2W - np.einsum("kij,k->ij", self.gamma, L.dW)
        d = len(q)
        if np.any(L.dg) or np.any(L.d2g):
            self.R = riemann(sys.metric, q)
        else:
            self.R = np.zeros((d, d, d, d))

    def nabla_J(self, a, b):
        u, x = conventions.nabla_J_args(a, b)
        return nabla_J_from(self.gamma, self.J, self.dJ, u, x)


def _terms(P: _PointData, ph, v, norm2):
    g = P.g
    Rv = np.einsum("lkij,i,j,k->l", P.R, ph, v, ph)  # R(ph, v) ph
    Jv = P.J @ v
    gJpv = (P.J @ ph) @ g @ v
    gvW = v @ g @ P.gradW
    return {
        "riemann": float(Rv @ g @ v),
        "nabla_J": float(P.nabla_J(ph, v) @ g @ v),
        "J_square": 0.25 * float(Jv @ g @ Jv),
        "J_p_square": 3.0 / (4.0 * norm2) * gJpv**2,
        "cross": 3.0 / norm2 * gvW * gJpv,
        "grad_W_square": 3.0 / norm2 * gvW**2,
        "hess_W": float(v @ P.hessW @ v),
    }


def _coefficient_norm(sys: ReducedSystem, lam: CotangentState) -> float:
    if conventions.USE_STATE_NORM:
        return lam.norm2
    return 2.0 * (sys.c0 + sys.potential(lam.q))


def check_state(sys: ReducedSystem, lam: CotangentState, v=None, P=None):
    n2 = sys.kinetic_norm2(lam.q)
    if n2 <= 0.0:
        raise CurvatureError("c0 lies below the potential at this point")
    if abs(lam.norm2 - n2) > SHELL_TOL * max(1.0, n2):
        raise CurvatureError(f"state is off the energy level: |p|^2={lam.norm2:.12g}, expected {n2:.12g}")
    if v is not None:
        g = sys.metric.metric(lam.q) if P is None else P.g
        ph = (P.ginv if P is not None else np.linalg.inv(g)) @ lam.p
        v = np.asarray(v, dtype=float)
        scale = np.sqrt(lam.norm2 * max(v @ g @ v, 1e-300))
        if abs(ph @ g @ v) > ORTHO_TOL * max(1.0, scale):
            raise CurvatureError("v is not g-orthogonal to p^h")


def curvature_terms(sys: ReducedSystem, lam: CotangentState, v, check: bool = True, P=None) -> dict:
    """The seven named terms of the curvature form at ``(lam, v)``."""
    if P is None:
        P = _PointData(sys, lam.q)
    v = np.asarray(v, dtype=float)
    if check:
        check_state(sys, lam, v, P)
    ph = P.ginv @ lam.p
    return _terms(P, ph, v, _coefficient_norm(sys, lam))


def curvature_form(sys: ReducedSystem, lam: CotangentState, v, check: bool = True) -> float:
    return float(sum(curvature_terms(sys, lam, v, check).values()))


def curvature_matrix(sys: ReducedSystem, lam: CotangentState, V=None, check: bool = True, P=None) -> np.ndarray:
    """Polarized curvature form on a g-orthonormal basis of ``{v : g(p^h, v) = 0}``."""
    if P is None:
        P = _PointData(sys, lam.q)
    if check:
        check_state(sys, lam, None, P)
    if V is None:
        V = vertical_basis(sys, lam.q, lam.p)
    m = V.shape[1]
    r = lambda v: sum(curvature_terms(sys, lam, v, False, P).values())
    diag = [r(V[:, a]) for a in range(m)]
    M = np.diag(diag)
    for a in range(m):
        for b in range(a + 1, m):
            M[a, b] = M[b, a] = 0.5 * (r(V[:, a] + V[:, b]) - diag[a] - diag[b])
    return M


@dataclass
class CurvatureSample:
    state: CotangentState
    basis: np.ndarray
    matrix: np.ndarray
    terms: list  # per basis vector

    def to_dict(self):
        return {
            "q": self.state.q.tolist(),
            "p": self.state.p.tolist(),
            "basis": self.basis.tolist(),
            "matrix": self.matrix.tolist(),
            "terms": self.terms,
        }


def curvature_sample(sys: ReducedSystem, lam: CotangentState, V=None) -> CurvatureSample:
    P = _PointData(sys, lam.q)
    if V is None:
        V = vertical_basis(sys, lam.q, lam.p)
    M = curvature_matrix(sys, lam, V, True, P)
    terms = [curvature_terms(sys, lam, V[:, a], False, P) for a in range(V.shape[1])]
    return CurvatureSample(lam, V, M, terms)


# --------------------------------------------------------------------------
# criteria


@dataclass
class CriterionReport:
    mode: str
    sup: float
    margin: float
    satisfied: bool
    argmax: dict
    k_max: float | None = None
    lhs_positive: bool | None = None
    applicable: bool = True
    notes: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        def clean(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return clean(
            {
                "mode": self.mode,
                "sup": self.sup,
                "margin": self.margin,
                "satisfied": self.satisfied,
                "argmax": self.argmax,
                "k_max": self.k_max,
                "lhs_positive": self.lhs_positive,
                "applicable": self.applicable,
                "notes": self.notes,
                "grid": self.grid,
                "extra": self.extra,
            }
        )


def unit_directions(d: int, n: int) -> np.ndarray:
    """Roughly uniform Euclidean unit vectors in R^d (rows)."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if d == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        r = np.sqrt(1 - z**2)
        phi = np.pi * (1 + 5**0.5) * k
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    x = np.random.default_rng(0).normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _g_unit(g, u):
    """Map a Euclidean unit vector to a g-unit vector (via the Cholesky factor)."""
    L = np.linalg.cholesky(g)
    return np.linalg.solve(L.T, u)


def _ascend(f, x0, project, steps=20, h=1e-6, step0=0.1):
    """Projected gradient ascent with backtracking; returns (x, f(x))."""
    x = project(np.asarray(x0, dtype=float))
    fx = f(x)
    step = step0
    for _ in range(steps):
        grad = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            grad[i] = (f(project(x + e)) - f(project(x - e))) / (2 * h)
        nrm = np.linalg.norm(grad)
        if nrm < 1e-14:
            break
        improved = False
        s = step
        for _ in range(20):
            cand = project(x + s * grad / nrm)
            fc = f(cand)
            if fc > fx:
                x, fx, improved = cand, fc, True
                step = 2 * s
                break
            s *= 0.5
        if not improved:
            break
    return x, fx


def _check_region(sys: ReducedSystem, region: Region, pts):
    if len(pts) == 0:
        raise CurvatureError("empty grid")
    bad = [q for q in pts if sys.kinetic_norm2(q) <= 0.0]
    if bad:
        raise CurvatureError(f"c0 lies below the potential at {np.asarray(bad[0]).tolist()}")


def _on_level(sys, q, w):
    return CotangentState.on_level(sys, q, w)


def _max_eig_at(sys, q, u):
    P = _PointData(sys, q)
    w = _g_unit(P.g, u)
    lam = _on_level(sys, q, w)
    M = curvature_matrix(sys, lam, None, False, P)
    return float(np.max(np.linalg.eigvalsh(M))), lam, M


def criterion_pointwise(sys: ReducedSystem, region: Region, grid_q: int = 7, grid_sphere: int = 16, refine: bool = True) -> CriterionReport:
    """Supremum of the largest curvature eigenvalue over the energy level above ``region``."""
    d = sys.dim
    if d < 2:
        return CriterionReport("theorem3", float("nan"), float("nan"), False, {}, applicable=False, notes=["base is a curve: not applicable"])
    pts = region.grid(grid_q)
    _check_region(sys, region, pts)
    dirs = unit_directions(d, grid_sphere)
    best = (-np.inf, None, None)
    for q in pts:
        for u in dirs:
            val, _, _ = _max_eig_at(sys, q, u)
            if val > best[0]:
                best = (val, q, u)
    sup, q_best, u_best = best
    refined = False
    if refine:
        def proj(x):
            q = region.clip(x[:d])
            u = x[d:]
            nu = np.linalg.norm(u)
            return np.concatenate([q, u / nu if nu > 0 else u_best])

        def obj(x):
            try:
                return _max_eig_at(sys, x[:d], x[d:])[0]
            except Exception:
                return -np.inf

        x, fx = _ascend(obj, np.concatenate([q_best, u_best]), proj)
        if fx > sup:
            sup, q_best, u_best, refined = fx, x[:d], x[d:], True
    _, lam, M = _max_eig_at(sys, q_best, u_best)
    return CriterionReport(
        mode="theorem3",
        sup=float(sup),
        margin=float(-sup),
        satisfied=bool(sup < 0.0),
        argmax={"q": q_best, "p": lam.p, "matrix": M},
        grid={"q_points": len(pts), "directions": len(dirs), "refined": refined},
    )


def _theorem4_terms(sys, P, q, w, v):
    c0W = sys.c0 + P.W
    g = P.g
    Jv = P.J @ v
    gwJv = w @ g @ Jv
    gradW_norm = np.sqrt(max(P.gradW @ g @ P.gradW, 0.0))
    hess_norm = _operator_norm(g, P.hessW)
    return {
        "nabla_J": float(v @ g @ P.nabla_J(w, v)),
        "J_square": 0.25 * float(Jv @ g @ Jv),
        "J_w_square": 3.0 / (8.0 * c0W) * gwJv**2,
        "cross": 3.0 / (2.0 * c0W) * float(v @ g @ P.gradW) * float((P.J @ w) @ g @ v),
        "grad_W_square": 3.0 * (gradW_norm / (2.0 * c0W)) ** 2,
        "hess_W": hess_norm / (2.0 * c0W),
    }


def _operator_norm(g, B) -> float:
    """Operator norm of the symmetric bilinear form ``B`` relative to ``g``."""
    Linv = np.linalg.inv(np.linalg.cholesky(g))
    return float(np.max(np.abs(np.linalg.eigvalsh(Linv @ B @ Linv.T))))


def _corollary2_terms(sys, P, q, w, v):
    g = P.g
    Jv = P.J @ v
    return {"nabla_J": float(v @ g @ P.nabla_J(w, v)), "J_square": float(Jv @ g @ Jv)}


def _frames(P, d, u, n_v):
    """Orthonormal pairs (w, v) with w from ``u`` and v sweeping the complement."""
    g = P.g
    w = _g_unit(g, u)
    comp = []
    for e in np.eye(d):
        x = e - (w @ g @ e) * w
        for c in comp:
            x = x - (c @ g @ x) * c
        nx = np.sqrt(max(x @ g @ x, 0.0))
        if nx > 1e-8:
            comp.append(x / nx)
    comp = np.array(comp[: d - 1]).T
    if d == 2:
        return w, [comp[:, 0]]
    coeffs = unit_directions(d - 1, n_v)
    return w, [comp @ c for c in coeffs]


def criterion_theorem4(
    sys: ReducedSystem,
    region: Region,
    grid_q: int = 7,
    grid_sphere: int = 16,
    mode: str = "theorem4",
    k_max: float | None = None,
    refine: bool = True,
) -> CriterionReport:
    """Sup of the global-criterion left-hand side over orthonormal unit pairs ``(v, w)``.

    ``mode`` selects the printed inequality: ``theorem4`` (all terms),
    ``corollary1`` (pure potential) or ``corollary2`` (pure magnetic).
    """
    if mode not in ("theorem4", "corollary1", "corollary2"):
        raise ValueError(f"unknown mode {mode!r}")
    d = sys.dim
    if d < 2:
        return CriterionReport(mode, float("nan"), float("nan"), False, {}, applicable=False, notes=["base is a curve: not applicable"])
    pts = region.grid(grid_q)
    _check_region(sys, region, pts)
    notes = []
    if k_max is None:
        rep = compute_k_max(sys.metric, region, grid=grid_q)
        k_max = rep.value
    if mode == "corollary1" and not sys.magnetic.is_zero:
        notes.append("magnetic field present: corollary1 ignores it")
    if mode == "corollary2" and any(sys.potential.gradient(q).any() for q in pts):
        notes.append("potential present: corollary2 ignores it")
    term_fn = {"theorem4": _theorem4_terms, "corollary2": _corollary2_terms}.get(mode)
    dirs = unit_directions(d, grid_sphere)

    def at(q, u, vi=None):
        P = _PointData(sys, q)
        if mode == "corollary1":
            t = _theorem4_terms(sys, P, q, _g_unit(P.g, dirs[0]), _frames(P, d, dirs[0], 1)[1][0])
            terms = {"grad_W_square": t["grad_W_square"], "hess_W": t["hess_W"]}
            return sum(terms.values()), terms, None, None
        w, vs = _frames(P, d, u, max(grid_sphere // 2, 4))
        best = None
        for v in vs if vi is None else [vi]:
            terms = term_fn(sys, P, q, w, v)
            val = sum(terms.values())
            if best is None or val > best[0]:
                best = (val, terms, w, v)
        return best

    best = None
    for q in pts:
        for u in dirs if mode != "corollary1" else dirs[:1]:
            val, terms, w, v = at(q, u)
            if best is None or val > best[0]:
                best = (val, terms, w, v, q, u)
    sup, terms, w, v, q_best, u_best = best
    refined = False
    if refine:
        def proj(x):
            q = region.clip(x[:d])
            u = x[d:]
            nu = np.linalg.norm(u)
            return np.concatenate([q, u / nu if nu > 0 else u_best])

        def obj(x):
            try:
                return at(x[:d], x[d:])[0]
            except Exception:
                return -np.inf

        x, fx = _ascend(obj, np.concatenate([q_best, u_best]), proj)
        if fx > sup:
            sup, terms, w, v = at(x[:d], x[d:])
            q_best, refined = x[:d], True
    margin = -k_max - sup
    satisfied = bool(margin > 0)
    lhs_positive = bool(sup > 0)
    applicable = True
    if k_max >= 0:
        applicable = False
        notes.append("k_max >= 0: the inequality can only hold with a negative left-hand side (unsatisfiable in practice)")
    extra = {}
    if mode == "corollary2":
        # the printed pure-magnetic inequality against the general one at the same frame
        P = _PointData(sys, q_best)
        t4 = _theorem4_terms(sys, P, q_best, w, v)
        extra["theorem4_value_at_argmax"] = float(sum(t4.values()))
        extra["discrepancy"] = float(sup - sum(t4.values()))
    return CriterionReport(
        mode=mode,
        sup=float(sup),
        margin=float(margin),
        satisfied=satisfied,
        argmax={"q": q_best, "w": w, "v": v, "terms": terms},
        k_max=float(k_max),
        lhs_positive=lhs_positive,
        applicable=applicable,
        notes=notes,
        grid={"q_points": len(pts), "directions": len(dirs), "refined": refined},
        extra=extra,
    )
