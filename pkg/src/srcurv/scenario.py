"""Scenario files and the built-in model registry.

A scenario is a JSON object.  Every numeric value is a string holding a
decimal number or a constant expression (``"0.5"``, ``"2*pi"``) so that files
never depend on locale or float formatting.  See ``docs/scenario.md``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DEFAULT_ATOL, DEFAULT_DT, DEFAULT_RTOL, CotangentState
from .exprfield import ExprError, ScalarField, evaluate, free_vars, parse
from .geometry import ChartedMetric, MagneticTensor, Region, TwoForm
from .subriemannian import (
    ReducedSystem,
    SRStructure,
    half_plane_recenter,
    periodic_wrap,
    reduce,
    riemannian_system,
)

SCHEMA_VERSION = "1"
MODELS = (
    "flat_torus",
    "hyperbolic_plane",
    "sphere",
    "custom_conformal",
    "heisenberg",
    "surface_times_circle",
    "custom_sr",
)
SURFACE_MODELS = ("flat_torus", "hyperbolic_plane", "sphere", "custom_conformal", "heisenberg", "surface_times_circle")


class ScenarioError(ValueError):
    """Malformed scenario file (maps to exit code 2)."""


def number(text, what: str = "value") -> float:
    """Decimal string or constant expression -> float."""
    if not isinstance(text, str):
        raise ScenarioError(f"{what}: numbers must be given as strings, got {text!r}")
    try:
        return float(evaluate(parse(text, 0), []))
    except ExprError as e:
        raise ScenarioError(f"{what}: {e}") from e


def integer(text, what: str = "value") -> int:
    x = number(text, what)
    if x != int(x):
        raise ScenarioError(f"{what}: expected an integer, got {text!r}")
    return int(x)


def numbers(items, what):
    if not isinstance(items, list):
        raise ScenarioError(f"{what}: expected a list")
    return [number(x, f"{what}[{i}]") for i, x in enumerate(items)]


def _field(text, dim, params, what):
    if not isinstance(text, str):
        raise ScenarioError(f"{what}: expressions must be strings")
    try:
        return ScalarField.from_string(text, dim, params)
    except ExprError as e:
        raise ScenarioError(f"{what}: {e}") from e


# --------------------------------------------------------------------------
# registry defaults

TWO_PI = "2*pi"

DEFAULTS = {
    "flat_torus": {
        "potential": "0",
        "magnetic": [],
        "levels": {"c0": "0.5", "c": []},
        "region": {"lo": ["0", "0"], "hi": [TWO_PI, TWO_PI]},
        "initial": {"q": ["0.3", "0.2"], "direction": ["0.6", "0.8"]},
    },
    "hyperbolic_plane": {
        "potential": "0",
        "magnetic": ["1"],
        "levels": {"c0": "0.5", "c": ["0"]},
        "region": {"lo": ["-1", "0.5"], "hi": ["1", "2"]},
        "initial": {"q": ["0", "1"], "direction": ["1", "0"]},
    },
    "sphere": {
        "potential": "0",
        "magnetic": [],
        "levels": {"c0": "0.5", "c": []},
        "region": {"lo": ["-1", "-1"], "hi": ["1", "1"]},
        "initial": {"q": ["0.5", "0"], "direction": ["0", "1"]},
    },
    # the warped calibration model: non-constant metric, field and potential
    "custom_conformal": {
        "conformal_factor": "0.1*(cos(q1) + cos(q2))",
        "periods": [TWO_PI, TWO_PI],
        "potential": "0.05*cos(q1)",
        "magnetic": ["0.3*(1 + 0.2*cos(q2))"],
        "levels": {"c0": "0.5", "c": ["1"]},
        "region": {"lo": ["0", "0"], "hi": [TWO_PI, TWO_PI]},
        "initial": {"q": ["0.4", "1.1"], "direction": ["1", "0.3"]},
    },
    "heisenberg": {
        "sr": {
            "n": "3",
            "frame": [["1", "0", "-q2/2"], ["0", "1", "q1/2"]],
            "symmetries": [["0", "0", "1"]],
            "slice": ["q1", "q2", "0"],
        },
        "potential": "0",
        "levels": {"c0": "0.5", "c": ["1"]},
        "region": {"lo": ["-1", "-1"], "hi": ["1", "1"]},
        "initial": {"q": ["0", "0"], "direction": ["1", "0"]},
    },
    # hyperbolic plane x circle with a connection whose curvature is the area form
    "surface_times_circle": {
        "sr": {
            "n": "3",
            "frame": [["q2", "0", "-1"], ["0", "q2", "0"]],
            "symmetries": [["0", "0", "1"]],
            "slice": ["q1", "q2", "0"],
        },
        "potential": "0",
        "levels": {"c0": "0.5", "c": ["0.5"]},
        "region": {"lo": ["-1", "0.5"], "hi": ["1", "2"]},
        "initial": {"q": ["0", "1"], "direction": ["1", "0"]},
    },
    "custom_sr": {
        "potential": "0",
        "levels": {"c0": "0.5", "c": []},
    },
}

INTEGRATOR_DEFAULTS = {"method": "dop853", "T": "10", "dt": repr(DEFAULT_DT), "rtol": repr(DEFAULT_RTOL), "atol": repr(DEFAULT_ATOL)}
GRID_DEFAULTS = {"q": "7", "sphere": "16"}


def _merged(data: dict) -> dict:
    model = data.get("model")
    if model not in MODELS:
        raise ScenarioError(f"unknown model {model!r}; expected one of {', '.join(MODELS)}")
    out = json.loads(json.dumps(DEFAULTS[model]))
    for k, v in data.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    out["integrator"] = {**INTEGRATOR_DEFAULTS, **data.get("integrator", {})}
    out["grids"] = {**GRID_DEFAULTS, **data.get("grids", {})}
    return out


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


@dataclass
class IntegratorOptions:
    method: str
    T: float
    dt: float
    rtol: float
    atol: float


@dataclass
class Model:
    """A built scenario: the reduced system plus everything commands need."""

    name: str
    model: str
    system: ReducedSystem
    region: Region
    initial: CotangentState
    integrator: IntegratorOptions
    grid_q: int
    grid_sphere: int
    seed: int
    structure: SRStructure | None = None
    info: dict = field(default_factory=dict)


@dataclass
class ScenarioSpec:
    data: dict
    source: str = ""

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ScenarioError(f"cannot read {path}: {e}") from e
        return cls.from_text(text, str(path))

    @classmethod
    def from_text(cls, text: str, source: str = "") -> "ScenarioSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
        return cls.from_dict(data, source)

    @classmethod
    def from_dict(cls, data: dict, source: str = "") -> "ScenarioSpec":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION!r})")
        _merged(data)  # model check
        return cls(data, source)

    @property
    def model(self) -> str:
        return self.data["model"]

    @property
    def hash(self) -> str:
        return content_hash(self.data)

    @property
    def is_sub_riemannian(self) -> bool:
        return self.model in ("heisenberg", "surface_times_circle", "custom_sr")

    def resolved(self) -> dict:
        """Scenario with registry defaults filled in."""
        return _merged(self.data)

    def structure(self) -> SRStructure:
        d = self.resolved()
        if "sr" not in d:
            raise ScenarioError(f"model {self.model!r} has no sub-Riemannian structure")
        sr = d["sr"]
        params = self.params()
        try:
            n = integer(sr.get("n", "0"), "sr.n")
            return SRStructure(
                n,
                sr["frame"],
                sr["symmetries"],
                potential=d.get("potential", "0"),
                slice_map=sr.get("slice"),
                derived=integer(sr.get("derived", "0"), "sr.derived"),
                params=params,
                name=d.get("name", self.model),
            )
        except KeyError as e:
            raise ScenarioError(f"sr block misses {e}") from e
        except ExprError as e:
            raise ScenarioError(f"sr block: {e}") from e

    def params(self) -> dict:
        raw = self.data.get("params", {})
        if not isinstance(raw, dict):
            raise ScenarioError("params must be an object")
        return {k: number(v, f"params.{k}") for k, v in raw.items()}

    def build(self, validate_structure: bool = True) -> Model:
        d = self.resolved()
        params = self.params()
        levels = d.get("levels", {})
        c0 = number(levels.get("c0", "0.5"), "levels.c0")
        c = numbers(levels.get("c", []), "levels.c")
        region = self.region(d)
        S = None
        if self.is_sub_riemannian:
            S = self.structure()
            if S.n - S.s != len(region.lo):
                raise ScenarioError(f"region needs {S.n - S.s} coordinates")
            try:
                sys = reduce(S, c0, c, region=region, validate_first=validate_structure)
            except ValueError as e:
                raise ScenarioError(str(e)) from e
            if self.model == "surface_times_circle" and self._homogeneous(d):
                sys.recenter = half_plane_recenter
        else:
            sys = self._riemannian(d, params, c0, c, region)
        sys.name = d.get("name", self.model)
        try:
            sys.check_levels(region.grid(5))
        except ValueError as e:
            raise ScenarioError(str(e)) from e
        init = d.get("initial", {})
        q0 = numbers(init.get("q", ["0"] * sys.dim), "initial.q")
        w0 = numbers(init.get("direction", ["1"] + ["0"] * (sys.dim - 1)), "initial.direction")
        if len(q0) != sys.dim or len(w0) != sys.dim:
            raise ScenarioError(f"initial.q and initial.direction need {sys.dim} entries")
        try:
            lam0 = CotangentState.on_level(sys, q0, w0)
        except ValueError as e:
            raise ScenarioError(f"initial state: {e}") from e
        it = d["integrator"]
        if it["method"] not in ("dop853", "rk4"):
            raise ScenarioError(f"integrator.method must be dop853 or rk4, got {it['method']!r}")
        opts = IntegratorOptions(
            it["method"],
            number(it["T"], "integrator.T"),
            number(it["dt"], "integrator.dt"),
            number(it["rtol"], "integrator.rtol"),
            number(it["atol"], "integrator.atol"),
        )
        grids = d["grids"]
        return Model(
            name=sys.name,
            model=self.model,
            system=sys,
            region=region,
            initial=lam0,
            integrator=opts,
            grid_q=integer(grids["q"], "grids.q"),
            grid_sphere=integer(grids["sphere"], "grids.sphere"),
            seed=integer(d.get("seed", "0"), "seed"),
            structure=S,
        )

    # ------------------------------------------------------------------

    def region(self, d: dict | None = None) -> Region:
        d = self.resolved() if d is None else d
        reg = d.get("region")
        if reg is None:
            raise ScenarioError("region is required")
        lo, hi = numbers(reg.get("lo", []), "region.lo"), numbers(reg.get("hi", []), "region.hi")
        if len(lo) != len(hi) or not lo:
            raise ScenarioError("region.lo and region.hi must have the same nonzero length")
        periods = self._periods(d)
        periodic = [bool(periods and periods[k]) for k in range(len(lo))]
        try:
            return Region(lo, hi, periodic)
        except ValueError as e:
            raise ScenarioError(f"region: {e}") from e

    def _periods(self, d):
        if self.model == "flat_torus":
            return [2 * np.pi, 2 * np.pi]
        per = d.get("periods")
        if not per:
            return None
        return [number(p, "periods") if p not in (None, "", "0") else None for p in per]

    def _homogeneous(self, d) -> bool:
        """Constant field strengths and no potential: half-plane isometries apply."""
        params = self.params()
        texts = [d.get("potential", "0"), *d.get("magnetic", [])]
        try:
            return all(not free_vars(parse(t, 3, params)) for t in texts)
        except ExprError:
            return False

    def _riemannian(self, d, params, c0, c, region) -> ReducedSystem:
        model = self.model
        periods = self._periods(d)
        try:
            if model == "flat_torus":
                metric = ChartedMetric.from_strings([["1", "0"], ["0", "1"]], periods=periods, name=model)
            elif model == "hyperbolic_plane":
                metric = ChartedMetric.from_strings([["1/q2^2", "0"], ["0", "1/q2^2"]], name=model)
            elif model == "sphere":
                f = "4/(1 + q1^2 + q2^2)^2"
                metric = ChartedMetric.from_strings([[f, "0"], ["0", f]], name=model)
            else:
                if "metric" in d:
                    metric = ChartedMetric.from_strings(d["metric"], params, periods=periods, name=model)
                else:
                    dim = integer(d.get("dim", "2"), "dim")
                    metric = ChartedMetric.conformal(d["conformal_factor"], dim, params, periods=periods, name=model)
        except ExprError as e:
            raise ScenarioError(f"metric: {e}") from e
        dim = metric.dim
        W = _field(d.get("potential", "0"), dim, params, "potential")
        if "two_forms" in d:
            forms = []
            for k, entries in enumerate(d["two_forms"]):
                comps = {}
                for key, text in entries.items():
                    try:
                        i, j = (int(x) - 1 for x in key.split(","))
                    except ValueError as e:
                        raise ScenarioError(f"two_forms[{k}]: keys look like '1,2'") from e
                    comps[(i, j)] = _field(text, dim, params, f"two_forms[{k}][{key}]")
                forms.append(TwoForm(dim, comps))
            if len(c) != len(forms):
                raise ScenarioError("levels.c needs one value per 2-form")
            sys = ReducedSystem(metric, MagneticTensor(metric, forms, c), W, c0, region, model)
            sys.recenter = periodic_wrap(metric)
            return sys
        intensities = [_field(b, dim, params, f"magnetic[{i}]") for i, b in enumerate(d.get("magnetic", []))]
        if len(c) != len(intensities):
            raise ScenarioError(f"levels.c needs {len(intensities)} values (one per magnetic intensity)")
        try:
            sys = riemannian_system(metric, c0, W, intensities, c, region, model)
        except ValueError as e:
            raise ScenarioError(str(e)) from e
        if model == "hyperbolic_plane" and self._homogeneous(d):
            sys.recenter = half_plane_recenter
        return sys


def builtin(model: str, **overrides) -> ScenarioSpec:
    """Scenario for a registry model with optional top-level overrides."""
    data = {"schema_version": SCHEMA_VERSION, "model": model, **overrides}
    return ScenarioSpec.from_dict(data)
