"""Expression reader, printer, and traversals."""
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from libminer.expr import (
    App,
    Const,
    Kernel,
    Num,
    OPERATORS,
    ParseError,
    Var,
    alpha_normalize,
    count_ops,
    expr_size,
    format_fraction,
    free_vars,
    make_num,
    num_fraction,
    parse_expr,
    parse_fpcore,
    print_expr,
    print_kernel,
    subexpr_multiplicity,
    subexpressions,
    substitute,
)


def test_round_trip_simple(parse):
    for src in [
        "x",
        "(+ x y)",
        "(log (/ (+ 1 x) (- 1 x)))",
        "(fma a b c)",
        "(* PI (sin x))",
        "(pow x 6)",
        "(+ 0.5 (/ 1 3))",
    ]:
        e = parse(src)
        assert parse(print_expr(e)) == e


def test_literal_canonicalization():
    assert make_num("1.50") == make_num("3/2")
    assert make_num("0.1").value == "0.1"
    assert make_num("2e-3").value == "0.002"
    assert make_num("-3").value == "-3"
    assert make_num("1/3").value == "1/3"
    # huge magnitudes go scientific
    assert "e" in make_num("1e100").value or len(make_num("1e100").value) > 90


@given(
    st.builds(
        Fraction,
        st.integers(min_value=-(10**12), max_value=10**12),
        st.integers(min_value=1, max_value=10**12),
    )
)
@settings(max_examples=200, deadline=None)
def test_format_fraction_round_trips(f):
    assert Fraction(format_fraction(f)) == f


def test_unary_minus_is_negation(parse):
    e = parse("(- x)")
    assert e == App("neg", (Var("x"),))


def test_parse_error_positions(parse):
    with pytest.raises(ParseError) as ei:
        parse_expr("(+ x\n  (unknownop y))", OPERATORS)
    assert ei.value.line == 2
    with pytest.raises(ParseError):
        parse_expr("(sin x y)", OPERATORS)  # arity
    with pytest.raises(ParseError):
        parse_expr("(+ x", OPERATORS)  # unclosed


def test_free_vars_order(parse):
    assert free_vars(parse("(+ (* b a) (- a c))")) == ["b", "a", "c"]
    assert free_vars(parse("3")) == []


def test_substitute_simultaneous(parse):
    e = parse("(+ x y)")
    out = substitute(e, {"x": Var("y"), "y": Var("x")})
    assert print_expr(out) == "(+ y x)"


def test_alpha_normalize(parse):
    e, ren = alpha_normalize(parse("(/ q (+ 1 p))"))
    assert print_expr(e) == "(/ t1 (+ 1 t2))"
    assert ren == {"q": "t1", "p": "t2"}
    # already-normal input is a fixed point
    e2, _ = alpha_normalize(e)
    assert e2 == e


def test_subexpressions_and_multiplicity(parse):
    e = parse("(* (+ 1 x) (+ 1 x))")
    subs = {print_expr(s) for s in subexpressions(e)}
    assert subs == {"(* (+ 1 x) (+ 1 x))", "(+ 1 x)"}
    mult = {print_expr(k): v for k, v in subexpr_multiplicity(e).items()}
    assert mult["(+ 1 x)"] == 2
    assert mult["(* (+ 1 x) (+ 1 x))"] == 1


def test_expr_size_and_count_ops(parse):
    e = parse("(log (/ (+ 1 x) (- 1 x)))")
    assert expr_size(e) == 8
    assert count_ops(e) == {"log": 1, "/": 1, "+": 1, "-": 1}


def test_parse_fpcore_named_and_pre():
    ks = parse_fpcore(
        "(FPCore ratio (x) :pre (<= -0.5 x 0.5) (/ (+ 1 x) (- 1 x)))\n"
        "(FPCore (a b) (hypot a b))"
    )
    assert [k.name for k in ks] == ["ratio", "kernel2"]
    assert ks[0].args == ("x",)
    assert ks[0].pre is not None
    assert ks[1].pre is None
    # round trip through the kernel printer
    again = parse_fpcore(print_kernel(ks[0]))[0]
    assert again == ks[0]


def test_parse_fpcore_errors():
    with pytest.raises(ParseError):
        parse_fpcore("(FPCore (x x) (+ x x))")  # duplicate arg
    with pytest.raises(ParseError):
        parse_fpcore("(FPCore (x) :rnd nearest (+ x 1))")  # unsupported prop
    with pytest.raises(ParseError):
        parse_fpcore("(+ 1 2)")  # not an FPCore form


_leaf = st.one_of(
    st.sampled_from([Var("x"), Var("y"), Var("z")]),
    st.sampled_from([make_num(s) for s in ["0", "1", "0.5", "-2", "7/3"]]),
    st.sampled_from([Const("PI"), Const("E")]),
)


def _apps(children):
    unary = [op for op, ar in OPERATORS.items() if ar == 1]
    binary = [op for op, ar in OPERATORS.items() if ar == 2]
    return st.one_of(
        st.tuples(st.sampled_from(unary), children).map(
            lambda t: App(t[0], (t[1],))
        ),
        st.tuples(st.sampled_from(binary), children, children).map(
            lambda t: App(t[0], (t[1], t[2]))
        ),
        st.tuples(children, children, children).map(
            lambda t: App("fma", (t[0], t[1], t[2]))
        ),
    )


_exprs = st.recursive(_leaf, _apps, max_leaves=12)


@given(_exprs)
@settings(max_examples=200, deadline=None)
def test_print_parse_round_trip(e):
    assert parse_expr(print_expr(e), OPERATORS) == e


@given(_exprs)
@settings(max_examples=100, deadline=None)
def test_alpha_normalize_idempotent(e):
    n1, _ = alpha_normalize(e)
    n2, _ = alpha_normalize(n1)
    assert n1 == n2
    assert expr_size(n1) == expr_size(e)
