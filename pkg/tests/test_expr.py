from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mattisglass.expr import (
    BinOp, Call, ExprDomainError, ExprSyntaxError, Neg, Num, Pow, UnknownIdentifierError, Var, compile_numba,
    eval_expr, parse_expr, to_source, variables_of,
)

VARS = ("a", "b", "c")


@pytest.mark.parametrize("src, want", [
    ("1+2*3", 7.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("(-2)^2", 4.0),
    ("8/4/2", 1.0),
    ("8-3-2", 3.0),
    ("2*-3", -6.0),
    ("abs(-3)+exp(0)", 4.0),
    ("1e-3*1000", 1.0),
])
def test_fixed_values(src, want):
    assert eval_expr(parse_expr(src, []), {}) == want


def test_variables_and_broadcast():
    node = parse_expr("m_1*m_2 + m_1^2", ["m_1", "m_2"])
    assert variables_of(node) == {"m_1", "m_2"}
    out = eval_expr(node, {"m_1": np.array([1.0, 2.0]), "m_2": 3.0})
    assert np.array_equal(out, [4.0, 10.0])


def test_unknown_identifier_position():
    with pytest.raises(UnknownIdentifierError) as err:
        parse_expr("m + q", ["m"])
    assert err.value.name == "q" and err.value.position == 4


@pytest.mark.parametrize("src", ["1+", "(1", "m^-1", "m^0.5", "2 3", "sin(m)", "m $ 2", "exp m"])
def test_syntax_errors(src):
    with pytest.raises(ExprSyntaxError):
        parse_expr(src, ["m"])


def test_domain_errors():
    with pytest.raises(ExprDomainError):
        eval_expr(parse_expr("1/m", ["m"]), {"m": 0.0})
    with pytest.raises(ExprDomainError):
        eval_expr(parse_expr("log(m)", ["m"]), {"m": -1.0})


def _trees():
    leaf = st.one_of(
        st.sampled_from(VARS).map(Var),
        st.floats(0.0, 5.0, allow_nan=False).map(Num),
    )

    def extend(child):
        return st.one_of(
            child.map(Neg),
            st.tuples(child, st.integers(0, 3)).map(lambda t: Pow(*t)),
            st.tuples(st.sampled_from(["exp", "cosh", "tanh", "abs"]), child).map(lambda t: Call(*t)),
            st.tuples(st.sampled_from("+-*/"), child, child).map(lambda t: BinOp(*t)),
        )

    return st.recursive(leaf, extend, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(_trees())
def test_print_parse_roundtrip(tree):
    assert parse_expr(to_source(tree), VARS) == tree


@settings(max_examples=25, deadline=None)
@given(_trees(), st.tuples(*[st.floats(-2.0, 2.0)] * 3))
def test_numba_matches_eval(tree, values):
    bind = dict(zip(VARS, values))
    try:
        ref = eval_expr(tree, bind)
    except ExprDomainError:
        return
    if not math.isfinite(ref) or abs(ref) > 1e12:
        return
    fn = compile_numba(tree, {v: i for i, v in enumerate(VARS)})
    got = fn(np.array(values, dtype=float))
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
