import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfix import expr as E
from gridfix.errors import ExpressionTypeError


def ev(text, src=None, ext=None):
    return E.evaluate(E.parse(text), src or {}, ext)


class TestArithmetic:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("1 + 2 * 3", 7),
            ("(1 + 2) * 3", 9),
            ("2 - 3 - 4", -5),
            ("-2 * 3", -6),
            ("7 / 2", 3.5),
            ("2 * 3 + 4 * 5", 26),
        ],
    )
    def test_precedence(self, text, expected):
        assert ev(text) == expected

    def test_division_by_zero_is_null(self):
        assert ev("1 / 0") is None
        assert ev("0 / 0") is None

    def test_functions(self):
        assert ev("sqrt(9)") == 3.0
        assert ev("abs(-4)") == 4
        assert ev("min(3, 1, 2)") == 1
        assert ev("max(3, 1, 2)") == 3
        assert ev("floor(2.7)") == 2
        assert ev("ceil(2.1)") == 3

    def test_sqrt_of_negative_is_null(self):
        assert ev("sqrt(-1)") is None


class TestNullSemantics:
    def test_null_literal(self):
        assert ev("null") is None

    def test_arith_propagates(self):
        assert ev("null + 1") is None
        assert ev("2 * null") is None
        assert ev("sqrt(null)") is None

    def test_comparison_with_null_is_false(self):
        assert ev("null < 1") is False
        assert ev("1 <= null <= 3") is False

    def test_conditional_null_guard_takes_else(self):
        assert ev("null ? 1 : 2") == 2


class TestComparisons:
    def test_chained(self):
        assert ev("1 <= 2 <= 3") is True
        assert ev("1 <= 5 <= 3") is False
        assert ev("3 > 2 > 1") is True

    def test_boolean_connectives(self):
        assert ev("1 < 2 and 3 < 4") is True
        assert ev("1 < 2 and 4 < 3") is False
        assert ev("1 > 2 or 3 < 4") is True
        assert ev("not 1 > 2") is True

    def test_ternary(self):
        assert ev("1 < 2 ? 10 : 20") == 10
        assert ev("1 > 2 ? 10 : 20") == 20


class TestScopes:
    def test_bare_names_resolve_src_then_ext(self):
        assert ev("d + 1", {"d": 2.0}) == 3.0
        assert ev("d + mu", {"d": 2.0}, {"mu": 5.0}) == 7.0

    def test_explicit_scopes(self):
        src = {"v": 1.0}
        ext = {"v": 10.0}
        assert ev("src.v", src, ext) == 1.0
        assert ev("ext.v", src, ext) == 10.0

    def test_clip_expression(self):
        src = {"d": 4.0}
        ext = {"mu": 5.0, "sigma": 1.0}
        text = "mu - 2 * sigma <= d <= mu + 2 * sigma ? d : null"
        assert ev(text, src, ext) == 4.0
        assert ev(text, {"d": 9.0}, ext) is None

    def test_type_check_rejects_unknown_names(self):
        with pytest.raises(ExpressionTypeError):
            E.type_check(E.parse("bogus + 1"), ("d",), ("mu",))

    def test_type_check_rejects_ambiguous_bare_name(self):
        with pytest.raises(ExpressionTypeError):
            E.type_check(E.parse("v + 1"), ("v",), ("v",))

    def test_type_check_accepts_scoped_disambiguation(self):
        E.type_check(E.parse("src.v + ext.v"), ("v",), ("v",))


# random expression ASTs for the printer round-trip
def _exprs():
    leaves = st.one_of(
        st.integers(-20, 20).map(E.Num),
        st.just(E.Null()),
        st.sampled_from(["d", "mu", "sigma"]).map(lambda n: E.Ref(n, None)),
    )

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from("+-*/"), children, children).map(
                lambda t: E.Bin(t[0], t[1], t[2])
            ),
            st.tuples(children, st.sampled_from(["<", "<=", ">", ">=", "=="]), children).map(
                lambda t: E.Cmp((t[0], t[2]), (t[1],))
            ),
            st.tuples(children, children, children).map(
                lambda t: E.Cond(t[0], t[1], t[2])
            ),
            children.map(lambda c: E.Unary("-", c)),
            children.map(lambda c: E.Call("sqrt", (c,))),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(_exprs())
@settings(max_examples=150, deadline=None)
def test_pretty_print_roundtrip(node):
    """Printing and reparsing yields an expression with identical meaning."""
    text = E.pretty(node)
    reparsed = E.parse(text)
    env = {"d": 2.0, "mu": 1.0, "sigma": 0.5}
    assert E.evaluate(reparsed, env) == E.evaluate(node, env)


@given(st.integers(-1000, 1000), st.integers(-1000, 1000))
@settings(max_examples=50, deadline=None)
def test_arith_matches_python(a, b):
    assert ev(f"{a} + {b}") == a + b
    assert ev(f"{a} * {b}") == a * b
    assert ev(f"({a}) - ({b})") == a - b
