"""Sub-Riemannian structures with transversal symmetries and their reduction.

A structure lives on a chart of R^n with an orthonormal frame of the
distribution ``D`` and ``s`` symmetry fields.  Reduction goes through an
explicit slice ``sigma: R^(n-s) -> R^n`` transversal to the symmetry orbits;
the quotient metric, the curvature 2-forms ``domega_i`` and the potential are
all produced as exact expressions in the slice coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import exprfield as ef
from .exprfield import Expr, ScalarField
from .geometry import (
    AreaFormIntensity,
    ChartedMetric,
    MagneticTensor,
    Region,
    TwoForm,
    _christoffel_from,
)

RESIDUAL_TOL = 1e-8
RANK_TOL = 1e-8


class StructureError(ValueError):
    pass


class LevelRuleError(StructureError):
    """Nonzero level on a direction of the derived symmetry algebra."""


class ReductionError(StructureError):
    pass


# --------------------------------------------------------------------------
# symbolic helpers


def _vec(texts: Sequence[str | Expr], dim: int, params) -> list[Expr]:
    return [ef.parse(t, dim, params) if isinstance(t, str) else t for t in texts]


def lie_bracket(X: Sequence[Expr], Y: Sequence[Expr]) -> list[Expr]:
    """Components of ``[X, Y] = DY.X - DX.Y``."""
    n = len(X)
    out = []
    for a in range(n):
        e = ef.ZERO
        for b in range(n):
            e = ef.add(e, ef.sub(ef.mul(X[b], ef.diff(Y[a], b)), ef.mul(Y[b], ef.diff(X[a], b))))
        out.append(e)
    return out


def _det(m: list[list[Expr]]) -> Expr:
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return ef.sub(ef.mul(m[0][0], m[1][1]), ef.mul(m[0][1], m[1][0]))
    total = ef.ZERO
    for j in range(n):
        if ef._is(m[0][j], 0.0):
            continue
        minor = [row[:j] + row[j + 1 :] for row in m[1:]]
        term = ef.mul(m[0][j], _det(minor))
        total = ef.add(total, term) if j % 2 == 0 else ef.sub(total, term)
    return total


def _adjugate(m: list[list[Expr]]) -> list[list[Expr]]:
    n = len(m)
    if n == 1:
        return [[ef.ONE]]
    adj = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1 :] for k, row in enumerate(m) if k != i]
            c = _det(minor)
            adj[j][i] = c if (i + j) % 2 == 0 else ef.neg(c)
    return adj


# --------------------------------------------------------------------------
# structure and validation


class SRStructure:
    """Distribution frame, symmetries, potential and slice on a chart of R^n.

    ``derived`` is the number of leading symmetries spanning the derived algebra
    ``[g, g]`` (0 for commuting symmetries).
    """

    def __init__(
        self,
        n: int,
        frame: Sequence[Sequence[str | Expr]],
        symmetries: Sequence[Sequence[str | Expr]],
        potential: str | Expr = "0",
        slice_map: Sequence[str | Expr] | None = None,
        derived: int = 0,
        params: Mapping[str, float] | None = None,
        name: str = "",
    ):
        self.params = dict(params or {})
        self.n = n
        self.s = len(symmetries)
        self.m1 = n - self.s
        if len(frame) != self.m1:
            raise StructureError(f"expected {self.m1} frame fields for corank {self.s}, got {len(frame)}")
        bind = lambda e: ef.bind(e, self.params)
        self.frame = [[bind(e) for e in _vec(f, n, self.params)] for f in frame]
        self.symmetries = [[bind(e) for e in _vec(x, n, self.params)] for x in symmetries]
        for f in self.frame + self.symmetries:
            if len(f) != n:
                raise StructureError("vector fields need n components")
        pot = ef.parse(potential, n, self.params) if isinstance(potential, str) else potential
        self.potential = bind(pot)
        if slice_map is None:
            slice_map = [f"q{i + 1}" for i in range(self.m1)] + ["0"] * self.s
        self.slice = [bind(e) for e in _vec(slice_map, self.m1, self.params)]
        if len(self.slice) != n:
            raise StructureError("slice map needs n components")
        if not 0 <= derived < max(self.s, 1):
            raise StructureError("derived algebra must be a proper subalgebra")
        self.derived = derived
        self.name = name
        self._compile()

    def _compile(self):
        n = self.n
        fields = self.frame + self.symmetries
        flat = [e for f in fields for e in f]
        jac = [ef.diff(e, b) for f in fields for e in f for b in range(n)]
        self._fields_fn = ef.compile_exprs(flat, n)
        self._jac_fn = ef.compile_exprs(jac, n)
        self._W = ScalarField(self.potential, n)

    def basis(self, x) -> np.ndarray:
        """Matrix whose columns are the frame fields followed by the symmetries."""
        v = np.array(self._fields_fn(x)).reshape(self.n, self.n)
        return v.T

    def jacobians(self, x) -> np.ndarray:
        """``J[f, a, b] = d_b V_f^a`` for every field ``f`` in basis order."""
        return np.array(self._jac_fn(x)).reshape(self.n, self.n, self.n)

    def slice_point(self, q) -> np.ndarray:
        return np.array(ef.compile_exprs(self.slice, self.m1)(q))


@dataclass
class ValidationReport:
    passed: bool
    residuals: dict
    failures: list
    bracket_rank: int
    n: int
    samples: int

    def to_dict(self):
        return {
            "passed": self.passed,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "failures": list(self.failures),
            "bracket_rank": self.bracket_rank,
            "dimension": self.n,
            "samples": self.samples,
        }


def _numeric_bracket(V, DV, i, j):
    return DV[j] @ V[:, i] - DV[i] @ V[:, j]


def _bracket_rank(S: SRStructure, samples) -> int:
    fields = [list(f) for f in S.frame]
    layer = list(fields)
    depth = 1
    best = 0
    while True:
        fn = ef.compile_exprs([e for f in fields for e in f], S.n)
        ranks = []
        for x in samples:
            M = np.array(fn(x)).reshape(len(fields), S.n)
            sv = np.linalg.svd(M, compute_uv=False)
            ranks.append(int(np.sum(sv > RANK_TOL * max(1.0, sv[0]))))
        best = min(ranks)
        if best >= S.n or depth >= S.n:
            return best
        new = []
        for X in S.frame:
            for Y in layer:
                B = lie_bracket(X, Y)
                if not all(ef._is(e, 0.0) for e in B):
                    new.append(B)
        if not new:
            return best
        layer = new
        fields = fields + new
        depth += 1


def validate(S: SRStructure, samples, levels: Sequence[float] | None = None) -> ValidationReport:
    """Check the standing assumptions at the given total-space sample points."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise StructureError("at least one sample point is required")
    m1, s = S.m1, S.s
    res = {"distribution": 0.0, "isometry": 0.0, "commutator": 0.0, "potential": 0.0}
    for x in samples:
        A = S.basis(x)
        if np.linalg.matrix_rank(A, tol=RANK_TOL) < S.n:
            raise StructureError(f"frame and symmetries do not span the tangent space at {x}")
        DV = S.jacobians(x)
        for i in range(s):
            xi = m1 + i
            C = np.empty((m1, m1))
            for a in range(m1):
                beta = np.linalg.solve(A, _numeric_bracket(A, DV, xi, a))
                res["distribution"] = max(res["distribution"], np.max(np.abs(beta[m1:]), initial=0.0))
                C[:, a] = beta[:m1]
            res["isometry"] = max(res["isometry"], np.max(np.abs(C + C.T)))
            res["potential"] = max(res["potential"], abs(S._W.gradient(x) @ A[:, xi]))
            for j in range(i + 1, s):
                br = _numeric_bracket(A, DV, xi, m1 + j)
                if S.derived == 0:
                    r = np.max(np.abs(br))
                else:
                    beta = np.linalg.solve(A, br)
                    outside = np.concatenate([beta[:m1], beta[m1 + S.derived :]])
                    r = np.max(np.abs(outside))
                res["commutator"] = max(res["commutator"], r)
    failures = []
    names = {
        "distribution": "symmetry flow does not preserve the distribution",
        "isometry": "symmetry flow does not preserve the metric on the distribution",
        "commutator": "symmetries do not commute" if S.derived == 0 else "brackets leave the declared derived algebra",
        "potential": "potential is not invariant along the symmetries",
    }
    for key, msg in names.items():
        if res[key] >= RESIDUAL_TOL:
            failures.append(f"{key}: {msg} (residual {res[key]:.3e})")
    rank = _bracket_rank(S, samples)
    if rank < S.n:
        failures.append(f"bracket: distribution is not bracket generating (rank {rank} < {S.n})")
    if levels is not None:
        try:
            check_level_rule(S, levels)
        except LevelRuleError as exc:
            failures.append(f"level: {exc}")
    return ValidationReport(not failures, res, failures, rank, S.n, len(samples))


def check_level_rule(S: SRStructure, levels: Sequence[float]):
    if len(levels) != S.s:
        raise StructureError(f"expected {S.s} levels, got {len(levels)}")
    bad = [i + 1 for i in range(S.derived) if levels[i] != 0.0]
    if bad:
        raise LevelRuleError(
            f"levels on derived-algebra directions must vanish (c_i = 0 for 1 <= i <= {S.derived}); "
            f"nonzero at i = {bad}"
        )


# --------------------------------------------------------------------------
# reduced system


class Local:
    """Geometric data of a reduced system at one chart point."""

    __slots__ = ("q", "g", "dg", "d2g", "ginv", "dginv", "Om", "dOm", "W", "dW", "d2W", "_gamma")

    def __init__(self, sys: "ReducedSystem", q):
        self.q = np.asarray(q, dtype=float)
        mj = sys.metric.jet(self.q)
        self.g, self.dg, self.d2g = mj
        self.ginv = sys.metric.inverse(self.g)
        self.dginv = -np.einsum("ka,mab,bl->mkl", self.ginv, self.dg, self.ginv)
        self.Om, self.dOm = sys.magnetic.combined(self.q, mj)
        self.W, self.dW, self.d2W = sys.potential.jet(self.q)
        self._gamma = None

    @property
    def gamma(self):
        if self._gamma is None:
            self._gamma = _christoffel_from(self.g, self.dg, self.ginv)
        return self._gamma

    @property
    def J(self):
        return -self.ginv @ self.Om

    def d2ginv(self):
        gi, dg = self.ginv, self.dg
        a = np.einsum("ab,lbc->lac", gi, dg)  # g^-1 d_l g
        t = np.einsum("lab,ibc,cd->liad", a, a, gi)
        return -np.einsum("ab,libd,de->liae", gi, self.d2g, gi) + t + t.transpose(1, 0, 2, 3)


@dataclass
class ReducedSystem:
    """Magnetic-plus-potential system on the cotangent bundle of the quotient.

    Energy convention: ``H = 1/2 g^{-1}(p, p) + W``; on the level ``H = c0`` the
    fibre norm is ``|p^h|^2 = 2 (c0 - W)``.
    """

    metric: ChartedMetric
    magnetic: MagneticTensor
    potential: ScalarField
    c0: float
    region: Region | None = None
    name: str = ""
    info: dict = field(default_factory=dict)
    # optional chart isometry: y -> (y', T) with tangent vectors mapped by T;
    # used by long runs to keep the state in a well-conditioned part of the chart
    recenter: Callable | None = None

    @property
    def dim(self) -> int:
        return self.metric.dim

    @property
    def m(self) -> int:
        return self.metric.dim - 1

    @property
    def levels(self) -> np.ndarray:
        return self.magnetic.levels

    def local(self, q) -> Local:
        return Local(self, q)

    def hamiltonian(self, q, p) -> float:
        g = self.metric.metric(q)
        p = np.asarray(p, dtype=float)
        return float(0.5 * p @ self.metric.inverse(g) @ p + self.potential(q))

    def kinetic_norm2(self, q) -> float:
        """``|p^h|^2`` on the energy level over ``q``."""
        return 2.0 * (self.c0 - self.potential(q))

    def with_levels(self, c0: float | None = None, c: Sequence[float] | None = None) -> "ReducedSystem":
        mag = self.magnetic if c is None else MagneticTensor(self.metric, self.magnetic.forms, c)
        return ReducedSystem(
            self.metric, mag, self.potential, self.c0 if c0 is None else c0, self.region, self.name, dict(self.info), self.recenter
        )

    def check_levels(self, points=None):
        """Kinetic energy must stay positive on the working region."""
        if points is None:
            if self.region is None:
                return
            points = self.region.grid(7)
        worst = min(self.kinetic_norm2(q) for q in points)
        if worst <= 0.0:
            raise ReductionError(f"c0 is below the potential on the region (min |p|^2 = {worst:.3g})")


def riemannian_system(
    metric: ChartedMetric,
    c0: float,
    potential: ScalarField | None = None,
    intensities: Sequence[ScalarField] = (),
    levels: Sequence[float] = (),
    region: Region | None = None,
    name: str = "",
) -> ReducedSystem:
    """System given directly on a surface/manifold: ``J_i = b_i * rot`` on surfaces."""
    if potential is None:
        potential = ScalarField.constant(0.0, metric.dim)
    forms = []
    for b in intensities:
        if metric.dim != 2:
            raise StructureError("magnetic intensities need a surface; give 2-forms instead")
        forms.append(AreaFormIntensity(b))
    mag = MagneticTensor(metric, forms, list(levels))
    return ReducedSystem(metric, mag, potential, float(c0), region, name, recenter=periodic_wrap(metric))


def periodic_wrap(metric: ChartedMetric):
    """Chart recentering by the period lattice (None for non-periodic charts)."""
    periods = [p or 0.0 for p in metric.periods]
    if not any(periods):
        return None
    d = metric.dim
    eye = np.eye(2 * d)

    def wrap(y):
        y = np.array(y, dtype=float)
        for k, per in enumerate(periods):
            if per:
                y[k] = np.mod(y[k], per)
        return y, eye

    return wrap


def half_plane_recenter(y):
    """Isometry of the upper half-plane moving ``q`` to ``(0, 1)``.

    ``q -> (q - (q1, 0)) / q2`` acts on covectors by ``p -> q2 p``.  Valid for
    data invariant under these maps (constant field strength, no potential).
    """
    q1, q2 = y[0], y[1]
    if abs(q1) < 4.0 and 0.25 < q2 < 4.0:
        return np.asarray(y, dtype=float), np.eye(4)
    s = q2
    out = np.array([0.0, 1.0, s * y[2], s * y[3]])
    return out, np.diag([1 / s, 1 / s, s, s])


def reduce(
    S: SRStructure,
    c0: float,
    c: Sequence[float],
    region: Region | None = None,
    samples=None,
    validate_first: bool = True,
) -> ReducedSystem:
    """Reduce ``S`` on the level ``(c0, c)`` to a system on the slice coordinates."""
    c = [float(x) for x in c]
    if len(c) != S.s:
        raise ReductionError(f"expected {S.s} levels, got {len(c)}")
    if S.derived:
        check_level_rule(S, c)
    if samples is None:
        rng = np.random.default_rng(1)
        box = region if region is not None else Region(-np.ones(S.m1), np.ones(S.m1))
        samples = [S.slice_point(q) for q in box.sample(rng, 8)]
    if validate_first and S.s > 0:
        rep = validate(S, samples, c)
        if not rep.passed:
            raise ReductionError("structure fails validation: " + "; ".join(rep.failures))

    m1, n = S.m1, S.n
    sub = {a: S.slice[a] for a in range(n)}
    A = [[ef.substitute(F[a], sub) for F in S.frame + S.symmetries] for a in range(n)]
    det = _det(A)
    adj = _adjugate(A)
    jac_slice = [[ef.diff(S.slice[a], k) for k in range(m1)] for a in range(n)]

    # slice transversality at the sample points
    det_fn = ef.compile_exprs([det], m1)
    slice_fn = ef.compile_exprs([e for row in jac_slice for e in row], m1)
    rng = np.random.default_rng(2)
    box = region if region is not None else Region(-np.ones(m1), np.ones(m1))
    for q in box.sample(rng, 8):
        if abs(det_fn(q)[0]) < RANK_TOL:
            raise ReductionError("frame degenerates on the slice")
        Sq = np.array(slice_fn(q)).reshape(n, m1)
        x = S.slice_point(q)
        M = np.concatenate([Sq, S.basis(x)[:, m1:]], axis=1)
        if np.linalg.matrix_rank(M, tol=RANK_TOL) < n:
            raise ReductionError("slice is not transversal to the symmetry orbits")

    # coefficients of sigma_* d_k in the (frame, symmetry) basis, times det
    coef = [[ef.ZERO] * m1 for _ in range(n)]
    for r in range(n):
        for k in range(m1):
            e = ef.ZERO
            for a in range(n):
                e = ef.add(e, ef.mul(adj[r][a], jac_slice[a][k]))
            coef[r][k] = e
    det2 = ef.mul(det, det)
    dim = m1
    comps = [[None] * dim for _ in range(dim)]
    for k in range(dim):
        for l in range(k, dim):
            e = ef.ZERO
            for a in range(m1):
                e = ef.add(e, ef.mul(coef[a][k], coef[a][l]))
            f = ScalarField(ef.div(e, det2), dim)
            comps[k][l] = comps[l][k] = f
    metric = ChartedMetric(comps, name=S.name)

    forms = []
    for i in range(S.s):
        # pulled-back connection form: (sigma^* omega_i)_k = coef[m1+i][k] / det
        om = [ef.div(coef[m1 + i][k], det) for k in range(dim)]
        entries = {}
        for k in range(dim):
            for l in range(k + 1, dim):
                entries[(k, l)] = ScalarField(ef.sub(ef.diff(om[l], k), ef.diff(om[k], l)), dim)
        forms.append(TwoForm(dim, entries))
    mag = MagneticTensor(metric, forms, c)
    W = ScalarField(ef.substitute(S.potential, sub), dim)
    red = ReducedSystem(metric, mag, W, float(c0), region, S.name, {"reduced_from": S.name, "n": n, "s": S.s})
    red.check_levels()
    return red
