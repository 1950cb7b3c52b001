"""Platform model: costs, extension, file round trip."""
import pytest

from libminer.expr import OPERATORS, parse_expr
from libminer.platform import (
    DEFINED,
    LEAF_COST,
    PlatformError,
    candidate_op_name,
    default_platform,
    expr_cost,
    extend,
    extend_all,
    parse_platform,
    print_platform,
)


def test_default_platform_covers_alphabet(plat):
    assert set(plat.ops) == set(OPERATORS)
    for name, spec in plat.ops.items():
        assert spec.arity == OPERATORS[name]
        assert spec.cost > 0
    assert plat.defined_ops() == []


def test_expr_cost_hand_computed(plat, parse):
    # log + div + add + sub + 4 leaves
    e = parse("(log (/ (+ 1 x) (- 1 x)))")
    want = 40.0 + 3.0 + 1.0 + 1.0 + 4 * LEAF_COST
    assert expr_cost(plat, e) == pytest.approx(want)
    with pytest.raises(PlatformError):
        expr_cost(plat, parse_expr("(weird x)", {"weird": 1}))


def test_extend_names_cost_formula(plat, parse):
    pat = parse("(log (/ (+ 1 b) (- 1 b)))")
    ext, spec = extend(plat, pat)
    assert spec.kind == DEFINED and spec.assumed_exact
    assert spec.arity == 1
    # formals are alpha-normalized away from the mined variable names
    from libminer.expr import free_vars

    assert free_vars(spec.formula) == ["t1"]
    naive = expr_cost(plat, parse("(log (/ (+ 1 t1) (- 1 t1)))"))
    assert spec.cost == pytest.approx(max(1.0, naive / 5.0))
    assert spec.name == candidate_op_name(parse("(log (/ (+ 1 t1) (- 1 t1)))"))
    # same pattern twice is a collision
    with pytest.raises(PlatformError):
        extend(ext, pat)


def test_extend_rejects_closed_pattern(plat, parse):
    with pytest.raises(PlatformError):
        extend(plat, parse("(+ 1 2)"))


def test_cheap_pattern_cost_floor(plat, parse):
    _, spec = extend(plat, parse("(+ a 1)"))
    assert spec.cost == 1.0  # naive 1.2 / 5 < 1 floors at 1


def test_platform_file_round_trip(plat, parse):
    ext = extend_all(
        plat,
        [parse("(log (/ (+ 1 b) (- 1 b)))"), parse("(sqrt (+ (* a a) (* b b)))")],
    )
    text = print_platform(ext)
    back = parse_platform(text)
    assert set(back.ops) == set(ext.ops)
    for name in ext.ops:
        assert back.ops[name].cost == ext.ops[name].cost
        assert back.ops[name].formula == ext.ops[name].formula
    # defined ops usable by the corpus parser via op_table
    assert back.op_table()[[s.name for s in back.defined_ops()][0]] in (1, 2)


def test_parse_platform_rejects_garbage():
    with pytest.raises(Exception):
        parse_platform("(op nosuchop 2 1.0)")
    with pytest.raises(Exception):
        parse_platform("(defop p 1 notanumber exact (+ t1 1))")


def test_candidate_op_name_stable(parse):
    a = candidate_op_name(parse("(log (+ 1 t1))"))
    b = candidate_op_name(parse("(log (+ 1 t1))"))
    assert a == b and a.startswith("prim_") and len(a) == 13
