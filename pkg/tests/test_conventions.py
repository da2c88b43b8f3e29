"""Re-run the sign/slot calibration against the Jacobi-curve oracle."""
import pytest

from srcurv import conventions
from srcurv.grassmann import random_states, verify_theorem2
from srcurv.scenario import builtin


@pytest.fixture(scope="module")
def calibration():
    M = builtin("custom_conformal").build()
    return M.system, random_states(M.system, M.region, 3, seed=11)


def test_chosen_conventions_agree_with_oracle(calibration):
    sys, pts = calibration
    rep = verify_theorem2(sys, pts)
    assert rep.passed and rep.max_rel_error < 1e-4


def test_other_derivative_slot_disagrees(calibration, monkeypatch):
    sys, pts = calibration
    monkeypatch.setattr(conventions, "NABLA_J_DIRECTION", "first")
    rep = verify_theorem2(sys, pts)
    assert not rep.passed and rep.max_rel_error > 1e-2


def test_literal_level_norm_disagrees(calibration, monkeypatch):
    sys, pts = calibration
    monkeypatch.setattr(conventions, "USE_STATE_NORM", False)
    rep = verify_theorem2(sys, pts)
    assert not rep.passed and rep.max_rel_error > 1e-3


def test_constant_field_model_is_insensitive_to_the_slot(monkeypatch):
    # with a parallel field nabla J vanishes, so both slots give the same answer
    M = builtin("hyperbolic_plane", levels={"c0": "0.5", "c": ["0.5"]}).build()
    pts = random_states(M.system, M.region, 1, seed=2)
    monkeypatch.setattr(conventions, "NABLA_J_DIRECTION", "first")
    assert verify_theorem2(M.system, pts).passed
