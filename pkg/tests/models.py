"""Model builders shared by the tests."""

from pathlib import Path

import numpy as np

from srcurv.exprfield import ScalarField
from srcurv.geometry import ChartedMetric, MagneticTensor, Region, TwoForm
from srcurv.subriemannian import ReducedSystem, SRStructure, half_plane_recenter, riemannian_system

HEISENBERG_FRAME = [["1", "0", "-q2/2"], ["0", "1", "q1/2"]]
SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def flat(periods=None):
    return ChartedMetric.from_strings([["1", "0"], ["0", "1"]], periods=periods)


def half_plane():
    return ChartedMetric.from_strings([["1/q2^2", "0"], ["0", "1/q2^2"]])


def sphere():
    f = "4/(1 + q1^2 + q2^2)^2"
    return ChartedMetric.from_strings([[f, "0"], ["0", f]])


def hyperbolic_system(b=0.0, c0=0.5):
    s = riemannian_system(half_plane(), c0, intensities=[ScalarField.constant(1.0, 2)], levels=[b])
    s.recenter = half_plane_recenter
    return s


def landau_system(b=1.0, c0=0.5):
    return riemannian_system(flat(), c0, intensities=[ScalarField.constant(1.0, 2)], levels=[b])


def flat_torus_system(c0=0.5, potential=None):
    W = None if potential is None else ScalarField.from_string(potential, 2)
    return riemannian_system(flat([2 * np.pi, 2 * np.pi]), c0, W)


def warped_system():
    M = ChartedMetric.conformal("0.1*(cos(q1) + cos(q2))", periods=[2 * np.pi, 2 * np.pi])
    return riemannian_system(
        M,
        0.5,
        potential=ScalarField.from_string("0.05*cos(q1)", 2),
        intensities=[ScalarField.from_string("0.3*(1 + 0.2*cos(q2))", 2)],
        levels=[1.0],
    )


# a curved, non-diagonal 3-d metric with a closed 2-form and a potential (m = 2)
WARPED3 = [
    ["1 + 0.2*q2^2", "0.1*sin(q3)", "0"],
    ["0.1*sin(q3)", "exp(0.3*q1)", "0.05*q1*q2"],
    ["0", "0.05*q1*q2", "1 + 0.1*cos(q1 + q2)"],
]


def warped3():
    return ChartedMetric.from_strings(WARPED3)


def three_dim_system(level=0.8, potential="0.1*cos(q1)*sin(q3)", c0=0.7):
    M = warped3()
    form = TwoForm(3, {(0, 1): ScalarField.from_string("1 + 0.3*q1", 3), (1, 2): ScalarField.from_string("0.2*cos(q2)", 3)})
    return ReducedSystem(M, MagneticTensor(M, [form], [level]), ScalarField.from_string(potential, 3), c0)


def heisenberg(potential="0"):
    return SRStructure(3, HEISENBERG_FRAME, [["0", "0", "1"]], potential=potential, slice_map=["q1", "q2", "0"])


HALF_PLANE_REGION = Region([-1.0, 0.5], [1.0, 2.0])
TORUS_REGION = Region([0.0, 0.0], [2 * np.pi, 2 * np.pi], [True, True])
BOX = Region([-1.0, -1.0], [1.0, 1.0])
