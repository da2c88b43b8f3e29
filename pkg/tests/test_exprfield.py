import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import fd_grad
from srcurv.exprfield import (
    FUNCTIONS,
    Const,
    DomainError,
    ExprError,
    ParseError,
    ScalarField,
    diff,
    evaluate,
    free_vars,
    parse,
    to_string,
)


def test_zero_constant():
    e = parse("0", 2)
    assert e == Const(0.0)
    f = ScalarField(e, 2)
    assert f([0.3, -7.0]) == 0.0
    assert f.is_constant


def test_sin_times_two():
    f = ScalarField.from_string("sin(q1)*2", 1)
    assert f([0.0]) == 0.0
    assert f.gradient([0.0])[0] == pytest.approx(2.0, abs=1e-15)


def test_exp():
    f = ScalarField.from_string("exp(q2)", 2)
    assert f([0.0, 1.0]) == pytest.approx(math.e, rel=1e-15)


def test_second_derivative_of_square():
    f = ScalarField.from_string("q1^2", 1)
    d2 = f.derivative((0, 0))
    for x in (-3.0, 0.0, 0.7, 11.0):
        assert d2([x]) == pytest.approx(2.0, abs=1e-14)


def test_third_derivative_of_cos_vanishes_at_zero():
    f = ScalarField.from_string("cos(q1)", 1)
    assert abs(f.derivative((0, 0, 0))([0.0])) < 1e-6


def test_mixed_second_derivative():
    f = ScalarField.from_string("exp(q1*q2)", 2)
    # hand differentiation: (1 + q1 q2) exp(q1 q2)
    assert f.derivative((0, 1))([1.0, 1.0]) == pytest.approx(2 * math.e, abs=1e-8)


def test_third_derivatives_against_closed_form():
    f = ScalarField.from_string("sin(q1*q2)", 2)
    x, y = 0.4, -0.9
    T = f.third([x, y])
    u = x * y
    # by hand: f_xxy = -2y sin(xy) - x y^2 cos(xy), f_xxx = -y^3 cos(xy)
    d_xxy = -2 * y * math.sin(u) - x * y**2 * math.cos(u)
    d_xxx = -(y**3) * math.cos(u)
    assert T[0, 0, 1] == pytest.approx(d_xxy, abs=1e-7)
    assert T[0, 1, 0] == pytest.approx(d_xxy, abs=1e-7)
    assert T[0, 0, 0] == pytest.approx(d_xxx, abs=1e-7)


def test_derivative_order_limit():
    f = ScalarField.from_string("q1^4", 1)
    with pytest.raises(ExprError):
        f.derivative((0, 0, 0, 0))


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ParseError) as info:
        parse("q1 + * q2", 2)
    assert info.value.offset == 5
    # multi-byte characters before the error shift the byte offset
    with pytest.raises(ParseError) as info:
        parse("q1 + é", 2)
    assert info.value.offset == 5


def test_unknown_identifier():
    with pytest.raises(ParseError, match="unknown identifier"):
        parse("q1 + r", 2)
    with pytest.raises(ParseError, match="unknown identifier"):
        parse("q3", 2)


def test_arity_mismatch():
    with pytest.raises(ParseError, match="arity"):
        parse("sin(q1, q2)", 2)


def test_parameters_and_binding():
    e = parse("a*q1 + b", 1, {"a": 2.0, "b": 1.0})
    f = ScalarField(e, 1, {"a": 2.0, "b": 1.0})
    assert f([3.0]) == 7.0
    with pytest.raises(ParseError):
        parse("a*q1", 1)


def test_domain_errors():
    with pytest.raises(DomainError):
        ScalarField.from_string("log(q1)", 1)([-1.0])
    with pytest.raises(DomainError):
        ScalarField.from_string("1/q1", 1)([0.0])
    with pytest.raises(DomainError):
        ScalarField.from_string("sqrt(q1)", 1)([-2.0])


def test_pi_constant():
    assert evaluate(parse("2*pi", 0), []) == pytest.approx(2 * math.pi)


def test_free_variables():
    assert free_vars(parse("q1 + sin(q3)", 3)) == {0, 2}


# --------------------------------------------------------------------------
# properties

atoms = st.one_of(
    st.sampled_from(["q1", "q2"]),
    st.floats(0.1, 3.0, allow_nan=False).map(lambda v: f"{v:.3f}"),
)


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")
    func = st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})")
    guarded = st.tuples(st.sampled_from(["exp", "log", "sqrt"]), children).map(
        lambda t: f"exp(0.1*{t[1]})" if t[0] == "exp" else f"{t[0]}(1.5 + sin({t[1]}))"
    )
    div = children.map(lambda c: f"({c}) / (2 + cos({c}))")
    power = children.map(lambda c: f"({c})^2")
    neg = children.map(lambda c: f"-({c})")
    return st.one_of(binop, func, guarded, div, power, neg)


expressions = st.recursive(atoms, _combine, max_leaves=8)


@given(expressions)
def test_parse_print_roundtrip(text):
    e = parse(text, 2)
    assert parse(to_string(e), 2) == e


@given(expressions, st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_tree_gradient_matches_finite_differences(text, point):
    f = ScalarField.from_string(text, 2)
    q = np.array(point)
    g = f.gradient(q)
    ref = fd_grad(lambda x: f(x), q, 1e-6)
    assert np.allclose(g, ref, rtol=1e-5, atol=1e-5)


@given(expressions, st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_mixed_partials_symmetric(text, point):
    f = ScalarField.from_string(text, 2)
    a = f.derivative((0, 1))(point)
    b = f.derivative((1, 0))(point)
    assert abs(a - b) <= 1e-8 * max(1.0, abs(a))
    H = f.hessian(point)
    assert abs(H[0, 1] - H[1, 0]) <= 1e-8 * max(1.0, abs(H[0, 1]))


@pytest.mark.parametrize("name", FUNCTIONS)
def test_builtin_function_derivatives(name, rng):
    # arguments kept inside every function's domain
    f = ScalarField.from_string(f"{name}(0.5 + q1^2 + 0.3*q2)", 2)
    for q in rng.uniform(0.0, 1.0, size=(100, 2)):
        g = f.gradient(q)
        ref = fd_grad(lambda x: f(x), q, 1e-6)
        assert np.allclose(g, ref, rtol=1e-6, atol=1e-8)


def test_derivative_is_an_expression():
    e = parse("q1^3 * exp(q2)", 2)
    d = diff(diff(e, 0), 1)
    assert parse(to_string(d), 2) == d
    assert evaluate(d, [1.0, 0.0]) == pytest.approx(3.0)
