import pytest
from hypothesis import given, strategies as st

from otsectest.assessment import Version, parse_version
from otsectest.conditions import (
    Comparison,
    Conjunction,
    Environment,
    Ident,
    Literal,
    RangeCheck,
    evaluate,
    identifiers,
    parse_condition,
)
from otsectest.errors import ConditionSyntaxError, TypeMismatch, UnboundIdentifier


def test_parse_version_comparison():
    expr = parse_condition("Current Version < Updated Version")
    assert expr == Comparison(Ident("Current Version"), "<", Ident("Updated Version"))


def test_parse_range_check():
    expr = parse_condition("Output value in [0, 100]")
    assert expr == RangeCheck(Ident("Output value"), Literal(0.0), Literal(100.0))


def test_parse_literals():
    expr = parse_condition('Asset Type = "Hardware" AND Current Version >= V7.1 Upd3 AND x != -2.5')
    assert isinstance(expr, Conjunction)
    assert [p.right for p in expr.parts] == [Literal("Hardware"), Literal(parse_version("V7.1 Upd3")), Literal(-2.5)]


def test_identifiers_in_order():
    expr = parse_condition("b < a AND a in [c, 3] AND b = 1")
    assert identifiers(expr) == ["b", "a", "c"]


@pytest.mark.parametrize("text", ["", "= 5", "x <", "x in [1 2]", "x in [1, 2", 'x = "open', "x = 1 AND", "x ? 3"])
def test_syntax_errors(text):
    with pytest.raises(ConditionSyntaxError):
        parse_condition(text)


def test_syntax_error_has_position():
    with pytest.raises(ConditionSyntaxError) as info:
        parse_condition("x = 1 AND y [ 2")
    assert info.value.position == 12


def test_evaluate_versions():
    env = {"Current Version": parse_version("V7.1"), "Updated Version": parse_version("V7.1 Upd3")}
    assert evaluate(parse_condition("Current Version < Updated Version"), env)
    assert not evaluate(parse_condition("Current Version = Updated Version"), env)


def test_lookup_folds_case_and_space():
    env = Environment({"Output  Value": 50})
    assert evaluate(parse_condition("output value in [0, 100]"), env)
    assert "OUTPUT VALUE" in env


def test_unbound_identifier():
    with pytest.raises(UnboundIdentifier):
        evaluate(parse_condition("x = 1"), {})


def test_unbound_reported_even_after_false_clause():
    with pytest.raises(UnboundIdentifier):
        evaluate(parse_condition("x = 2 AND y = 1"), {"x": 1})


@pytest.mark.parametrize("text, env", [
    ('x = "5"', {"x": 5}),
    ("x < V7.1", {"x": 2.0}),
    ("x in [0, 10]", {"x": "5"}),
    ("x = y", {"x": True, "y": True}),
])
def test_type_mismatch(text, env):
    with pytest.raises(TypeMismatch):
        evaluate(parse_condition(text), env)


def test_string_escape_round_trip():
    expr = parse_condition('Name = "say \\"hi\\""')
    assert expr.right == Literal('say "hi"')
    assert parse_condition(str(expr)) == expr


OPS = {"=": lambda a, b: a == b, "!=": lambda a, b: a != b, "<": lambda a, b: a < b,
       "<=": lambda a, b: a <= b, ">": lambda a, b: a > b, ">=": lambda a, b: a >= b}


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5), st.sampled_from(sorted(OPS)),
       st.sampled_from(sorted(OPS)), st.integers(-5, 5), st.integers(-5, 5))
def test_truth_table(x, y, z, op1, op2, lo, hi):
    text = f"x {op1} y AND z {op2} {lo} AND x in [{lo}, {hi}]"
    expected = OPS[op1](x, y) and OPS[op2](z, lo) and lo <= x <= hi
    expr = parse_condition(text)
    assert evaluate(expr, {"x": x, "y": y, "z": z}) == expected
    assert parse_condition(str(expr)) == expr


@given(st.integers(0, 9), st.integers(0, 9), st.integers(0, 4), st.integers(0, 9), st.integers(0, 9), st.integers(0, 4))
def test_version_truth_table(a1, a2, a3, b1, b2, b3):
    a, b = Version(a1, a2, a3), Version(b1, b2, b3)
    expr = parse_condition(f"v < {b.canonical()}")
    assert evaluate(expr, {"v": a}) == (a.key < b.key)
