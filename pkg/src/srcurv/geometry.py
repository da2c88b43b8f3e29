"""Chart-based Riemannian geometry for the reduced manifold.

Curvature sign convention: ``R(u, v)w`` is chosen so that
``g(R(u, v)u, v) = K * (|u|^2 |v|^2 - g(u, v)^2)`` with ``K`` the sectional
curvature, i.e. the negative of ``[nabla_u, nabla_v] - nabla_[u, v]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .exprfield import ScalarField, parse, ExprError

GRAM_TOL = 1e-12


class GeometryError(ValueError):
    pass


class SingularMetricError(GeometryError):
    pass


class DegeneratePlaneError(GeometryError):
    pass


@dataclass
class ClosedForm:
    """Optional closed-form evaluators used to cross-check the generic pipeline."""

    christoffel: Callable[[np.ndarray], np.ndarray] | None = None
    gaussian_curvature: Callable[[np.ndarray], float] | None = None


class ChartedMetric:
    """Riemannian metric given by component fields ``g_ij(q)`` on a chart."""

    def __init__(
        self,
        components: Sequence[Sequence[ScalarField]],
        periods: Sequence[float | None] | None = None,
        closed_form: ClosedForm | None = None,
        name: str = "",
    ):
        self.dim = len(components)
        self.components = components
        self._upper = [(i, j) for i in range(self.dim) for j in range(i, self.dim)]
        for i, j in self._upper:
            if components[i][j] is not components[j][i] and str(components[i][j].expr) != str(
                components[j][i].expr
            ):
                raise GeometryError(f"metric components ({i},{j}) and ({j},{i}) differ")
        self.periods = list(periods) if periods is not None else [None] * self.dim
        self.closed_form = closed_form
        self.name = name

    @classmethod
    def from_strings(cls, rows: Sequence[Sequence[str]], params=None, **kw):
        dim = len(rows)
        fields = [[None] * dim for _ in range(dim)]
        for i in range(dim):
            for j in range(i, dim):
                f = ScalarField.from_string(rows[i][j], dim, params)
                fields[i][j] = fields[j][i] = f
        return cls(fields, **kw)

    @classmethod
    def conformal(cls, phi: str, dim: int = 2, params=None, **kw):
        """Metric ``exp(2 phi) * delta``."""
        e = parse(f"exp(2*({phi}))", dim, params or {})
        f = ScalarField(e, dim, params)
        zero = ScalarField.constant(0.0, dim)
        fields = [[f if i == j else zero for j in range(dim)] for i in range(dim)]
        return cls(fields, **kw)

    def metric(self, q) -> np.ndarray:
        g = np.empty((self.dim, self.dim))
        for i, j in self._upper:
            g[i, j] = g[j, i] = self.components[i][j](q)
        return g

    def jet(self, q):
        """``g``, ``dg[k, i, j] = d_k g_ij`` and ``d2g[k, l, i, j]``."""
        d = self.dim
        g = np.empty((d, d))
        dg = np.empty((d, d, d))
        d2g = np.empty((d, d, d, d))
        for i, j in self._upper:
            v, gr, he = self.components[i][j].jet(q)
            g[i, j] = g[j, i] = v
            dg[:, i, j] = dg[:, j, i] = gr
            d2g[:, :, i, j] = d2g[:, :, j, i] = he
        return g, dg, d2g

    def third(self, q) -> np.ndarray:
        d = self.dim
        d3g = np.empty((d, d, d, d, d))
        for i, j in self._upper:
            t = self.components[i][j].third(q)
            d3g[:, :, :, i, j] = d3g[:, :, :, j, i] = t
        return d3g

    def inverse(self, g: np.ndarray) -> np.ndarray:
        try:
            L = np.linalg.cholesky(g)
        except np.linalg.LinAlgError as exc:
            raise SingularMetricError("metric is not positive definite") from exc
        Linv = np.linalg.inv(L)
        return Linv.T @ Linv

    def wrap(self, q) -> np.ndarray:
        q = np.array(q, dtype=float)
        for k, per in enumerate(self.periods):
            if per:
                q[k] = np.mod(q[k], per)
        return q


# --------------------------------------------------------------------------
# connection and curvature


def _christoffel_from(g, dg, ginv):
    # Gamma[k, i, j] = 1/2 g^{kl} (d_i g_lj + d_j g_li - d_l g_ij)
    t = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg
    return 0.5 * np.einsum("kl,lij->kij", ginv, t)


def christoffel(M: ChartedMetric, q) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j]`` of the Levi-Civita connection."""
    g, dg, _ = M.jet(q)
    return _christoffel_from(g, dg, M.inverse(g))


def christoffel_jet(M: ChartedMetric, q):
    """Christoffel symbols and their partials ``dGamma[m, k, i, j] = d_m Gamma^k_ij``."""
    g, dg, d2g = M.jet(q)
    ginv = M.inverse(g)
    t = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg
    gamma = 0.5 * np.einsum("kl,lij->kij", ginv, t)
    dginv = -np.einsum("ka,mab,bl->mkl", ginv, dg, ginv)
    # d_m t[l, i, j] = d_m d_i g_lj + d_m d_j g_li - d_m d_l g_ij
    dt = d2g.transpose(0, 2, 1, 3) + d2g.transpose(0, 2, 3, 1) - d2g
    dgamma = 0.5 * (np.einsum("mkl,lij->mkij", dginv, t) + np.einsum("kl,mlij->mkij", ginv, dt))
    return gamma, dgamma


def riemann(M: ChartedMetric, q) -> np.ndarray:
    """Curvature components ``R[l, k, i, j]`` with ``R(d_i, d_j) d_k = R[l, k, i, j] d_l``."""
    gamma, dgamma = christoffel_jet(M, q)
    # standard [nabla_i, nabla_j] d_k components, then flipped to the convention above
    std = (
        np.einsum("iljk->lkij", dgamma)
        - np.einsum("jlik->lkij", dgamma)
        + np.einsum("lim,mjk->lkij", gamma, gamma)
        - np.einsum("ljm,mik->lkij", gamma, gamma)
    )
    return -std


def curvature_operator(M: ChartedMetric, q, u, v, w, R=None) -> np.ndarray:
    """``R(u, v) w``."""
    if R is None:
        R = riemann(M, q)
    return np.einsum("lkij,i,j,k->l", R, u, v, w)


def sectional(M: ChartedMetric, q, u, v, R=None) -> float:
    g = M.metric(q)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    uu, vv, uv = u @ g @ u, v @ g @ v, u @ g @ v
    gram = uu * vv - uv * uv
    if gram < GRAM_TOL * max(1.0, uu * vv):
        raise DegeneratePlaneError("vectors do not span a plane")
    return float(curvature_operator(M, q, u, v, u, R) @ g @ v / gram)


def gaussian_curvature(M: ChartedMetric, q) -> float:
    if M.dim != 2:
        raise GeometryError("gaussian curvature needs a surface")
    return sectional(M, q, [1.0, 0.0], [0.0, 1.0])


def grad_hess(M: ChartedMetric, W: ScalarField, q):
    """Riemannian gradient and covariant Hessian of ``W`` at ``q``."""
    g, dg, _ = M.jet(q)
    ginv = M.inverse(g)
    _, dW, d2W = W.jet(q)
    gamma = _christoffel_from(g, dg, ginv)
    return ginv @ dW, d2W - np.einsum("kij,k->ij", gamma, dW)


# --------------------------------------------------------------------------
# magnetic tensors


class TwoForm:
    """Closed 2-form with components given as scalar fields (``i < j`` entries)."""

    def __init__(self, dim: int, entries: dict[tuple[int, int], ScalarField]):
        self.dim = dim
        self.entries = {}
        for (i, j), f in entries.items():
            if i == j:
                raise ExprError("2-form diagonal entries must vanish")
            if i > j:
                raise ExprError("give 2-form entries with i < j")
            if not f.is_constant or f(np.zeros(dim)) != 0.0:
                self.entries[(i, j)] = f

    def jet(self, q, metric_jet=None):
        d = self.dim
        om = np.zeros((d, d))
        dom = np.zeros((d, d, d))
        for (i, j), f in self.entries.items():
            v, gr, _ = f.jet(q)
            om[i, j], om[j, i] = v, -v
            dom[:, i, j], dom[:, j, i] = gr, -gr
        return om, dom


class AreaFormIntensity:
    """``b(q)`` times the Riemannian area form of a surface; gives ``J = b * rot``."""

    def __init__(self, b: ScalarField):
        self.b = b
        self.dim = 2

    def jet(self, q, metric_jet):
        g, dg, _ = metric_jet
        det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
        sq = np.sqrt(det)
        ginv = np.array([[g[1, 1], -g[0, 1]], [-g[0, 1], g[0, 0]]]) / det
        dsq = 0.5 * sq * np.einsum("ij,kji->k", ginv, dg)
        bv, bgr, _ = self.b.jet(q)
        om = np.array([[0.0, bv * sq], [-bv * sq, 0.0]])
        d12 = bgr * sq + bv * dsq
        dom = np.zeros((2, 2, 2))
        dom[:, 0, 1], dom[:, 1, 0] = d12, -d12
        return om, dom


class MagneticTensor:
    """Tensors ``J_i`` with ``g(J_i v, w) = domega_i(v, w)`` and ``J^c = sum c_i J_i``."""

    def __init__(self, metric: ChartedMetric, forms: Sequence, levels: Sequence[float]):
        if len(forms) != len(levels):
            raise GeometryError("one level per 2-form is required")
        self.metric = metric
        self.forms = list(forms)
        self.levels = np.asarray(levels, dtype=float)

    @property
    def s(self) -> int:
        return len(self.forms)

    def scaled(self, factor: float) -> "MagneticTensor":
        return MagneticTensor(self.metric, self.forms, factor * self.levels)

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.levels) or all(
            isinstance(f, TwoForm) and not f.entries for f in self.forms
        )

    def form_jets(self, q, metric_jet=None):
        if metric_jet is None and any(isinstance(f, AreaFormIntensity) for f in self.forms):
            metric_jet = self.metric.jet(q)
        return [f.jet(q, metric_jet) for f in self.forms]

    def combined(self, q, metric_jet=None):
        """``Omega^c`` and ``d_k Omega^c``."""
        d = self.metric.dim
        om = np.zeros((d, d))
        dom = np.zeros((d, d, d))
        if self.is_zero:
            return om, dom
        for c, (o, do) in zip(self.levels, self.form_jets(q, metric_jet)):
            if c != 0.0:
                om += c * o
                dom += c * do
        return om, dom

    def J(self, q, i: int | None = None) -> np.ndarray:
        """Matrix of ``J_i`` (or of ``J^c`` when ``i`` is None); ``J = -g^{-1} Omega``."""
        g = self.metric.metric(q)
        ginv = self.metric.inverse(g)
        if i is None:
            om, _ = self.combined(q)
        else:
            om, _ = self.form_jets(q)[i]
        return -ginv @ om

    def J_jet(self, q, metric_jet=None):
        """``J^c`` and its partials ``dJ[k, a, b] = d_k J^a_b``."""
        if metric_jet is None:
            metric_jet = self.metric.jet(q)
        g, dg, _ = metric_jet
        ginv = self.metric.inverse(g)
        om, dom = self.combined(q, metric_jet)
        dginv = -np.einsum("ka,mab,bl->mkl", ginv, dg, ginv)
        J = -ginv @ om
        dJ = -(np.einsum("mab,bc->mac", dginv, om) + np.einsum("ab,mbc->mac", ginv, dom))
        return J, dJ


def rot(M: ChartedMetric, q) -> np.ndarray:
    """Rotation by +pi/2 in an oriented g-orthonormal frame of a surface."""
    g = M.metric(q)
    sq = np.sqrt(np.linalg.det(g))
    return -M.inverse(g) @ np.array([[0.0, sq], [-sq, 0.0]])


def nabla_J(M: ChartedMetric, J: MagneticTensor, q, a, b) -> np.ndarray:
    """``(nabla_a J^c)(b)``: covariant derivative along ``a`` applied to ``b``."""
    mj = M.jet(q)
    g, dg, _ = mj
    gamma = _christoffel_from(g, dg, M.inverse(g))
    Jm, dJ = J.J_jet(q, mj)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return nabla_J_from(gamma, Jm, dJ, a, b)


def nabla_J_from(gamma, Jm, dJ, a, b):
    return (
        np.einsum("k,kij,j->i", a, dJ, b)
        + np.einsum("lki,k,i->l", gamma, a, Jm @ b)
        - Jm @ np.einsum("lki,k,i->l", gamma, a, b)
    )


# --------------------------------------------------------------------------
# regions and curvature bounds


@dataclass
class Region:
    lo: np.ndarray
    hi: np.ndarray
    periodic: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise GeometryError("empty region")
        if not self.periodic:
            self.periodic = [False] * len(self.lo)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def grid(self, n: int) -> np.ndarray:
        if n < 1:
            raise GeometryError("empty grid")
        axes = []
        for lo, hi, per in zip(self.lo, self.hi, self.periodic):
            if hi == lo:
                axes.append(np.array([lo]))
            elif per:
                axes.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo, hi, n))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def clip(self, q) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def contains(self, q) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.lo - 1e-12) and np.all(q <= self.hi + 1e-12))


@dataclass
class KmaxReport:
    value: float
    argmax_q: np.ndarray
    argmax_plane: tuple
    grid_points: int
    plane_samples: int
    refined: bool


def _planes(dim: int, n_angles: int):
    """Coordinate planes plus rotated pairs; for surfaces a single plane."""
    if dim == 2:
        return [(np.array([1.0, 0.0]), np.array([0.0, 1.0]))]
    rng = np.random.default_rng(0)
    planes = []
    for i in range(dim):
        for j in range(i + 1, dim):
            u, v = np.zeros(dim), np.zeros(dim)
            u[i], v[j] = 1.0, 1.0
            planes.append((u, v))
    for _ in range(n_angles):
        a = rng.normal(size=(dim, 2))
        qm, _ = np.linalg.qr(a)
        planes.append((qm[:, 0], qm[:, 1]))
    return planes


def k_max(M: ChartedMetric, region: Region, grid: int = 9, n_planes: int = 16, refine: bool = True) -> KmaxReport:
    """Largest sectional curvature on a grid over ``region``, refined by local ascent."""
    pts = region.grid(grid)
    if len(pts) == 0:
        raise GeometryError("empty region")
    planes = _planes(M.dim, n_planes)
    best = (-np.inf, None, None)
    for q in pts:
        R = riemann(M, q)
        for u, v in planes:
            k = sectional(M, q, u, v, R)
            if k > best[0]:
                best = (k, q.copy(), (u, v))
    value, q0, (u0, v0) = best
    refined = False
    if refine:
        d = M.dim

        def neg_k(x):
            q = region.clip(x[:d])
            if M.dim == 2:
                u, v = u0, v0
            else:
                u, v = x[d : 2 * d], x[2 * d :]
            try:
                return -sectional(M, q, u, v)
            except GeometryError:
                return np.inf

        x0 = np.concatenate([q0] + ([] if d == 2 else [u0, v0]))
        res = minimize(neg_k, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400})
        if np.isfinite(res.fun) and -res.fun > value:
            value = float(-res.fun)
            q0 = region.clip(res.x[:d])
            if d != 2:
                u0, v0 = res.x[d : 2 * d], res.x[2 * d :]
            refined = True
    return KmaxReport(float(value), q0, (u0, v0), len(pts), len(planes), refined)
