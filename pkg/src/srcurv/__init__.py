"""Reduced curvature of sub-Riemannian mechanical systems and hyperbolicity diagnostics."""

__version__ = "0.1.0"

from .curvature import (
    CriterionReport,
    curvature_form,
    curvature_matrix,
    curvature_terms,
    criterion_pointwise,
    criterion_theorem4,
)
from .dynamics import CotangentState, Trajectory, flow, reduced_tangent_basis, variational_flow
from .exprfield import ScalarField, parse
from .geometry import ChartedMetric, MagneticTensor, Region, christoffel, grad_hess, k_max, nabla_J, sectional
from .grassmann import (
    canonical_complement,
    jacobi_curve,
    normal_frame_curvature,
    oracle_curvature,
    velocity_form,
    verify_theorem2,
)
from .hyperbolic import cone_certificate, lyapunov, splitting
from .scenario import ScenarioSpec, builtin
from .subriemannian import ReducedSystem, SRStructure, reduce, riemannian_system, validate

__all__ = [name for name in dir() if not name.startswith("_")]
