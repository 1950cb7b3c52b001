"""Pool deduplication: canonical forms, class merging, conservation laws."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from libminer.dedup import Candidate, canonical_forms, dedup_classes, dedup_pool
from libminer.expr import alpha_normalize, print_expr
from libminer.generation import RawCandidate
from libminer.refeval import REF_OK, eval_reference
from libminer.superopt import SearchLimits

LIM = SearchLimits(max_nodes=3_000, max_iters=5)


def raw(parse, src, occ, *kernels):
    pat, _ = alpha_normalize(parse(src))
    return RawCandidate(pat, occ, set(kernels) or {"k"})


def test_canonical_forms_enumerate_permutations(parse):
    forms = {print_expr(e) for e in canonical_forms(parse("(- t1 t2)"))}
    assert forms == {"(- t1 t2)", "(- t2 t1)"}
    forms3 = canonical_forms(parse("(fma t1 t2 t3)"))
    assert len(forms3) == 6


def test_canonical_forms_collapse_symmetry(parse):
    # a pattern using one variable twice has a single canonical form
    forms = {print_expr(e) for e in canonical_forms(parse("(* t1 t1)"))}
    assert forms == {"(* t1 t1)"}


def test_canonical_forms_reject_wide(parse):
    with pytest.raises(ValueError):
        canonical_forms(parse("(fma (+ a b) c d)"))


def test_merges_commuted_spellings(plat, rules, parse):
    pool = [
        raw(parse, "(* (+ 1 x) y)", 5, "a"),
        raw(parse, "(* x (+ 1 y))", 6, "b"),
        raw(parse, "(log (+ 1 x))", 12, "a"),
        raw(parse, "(log (+ x 1))", 15, "c"),
    ]
    out = dedup_pool(pool, plat, rules, LIM)
    assert len(out) == 2
    by_text = {print_expr(c.pattern): c for c in out}
    prod = by_text["(* (+ 1 t1) t2)"]
    assert prod.frequency == 11
    assert prod.source_kernels == {"a", "b"}
    lg = by_text["(log (+ 1 t1))"]
    assert lg.frequency == 27
    assert lg.source_kernels == {"a", "c"}


def test_no_cross_arity_merge(plat, rules, parse):
    pool = [
        raw(parse, "(log (+ 1 x))", 3),
        raw(parse, "(log (+ 1 (* x y)))", 4),
    ]
    out = dedup_pool(pool, plat, rules, LIM)
    assert len(out) == 2
    assert {c.frequency for c in out} == {3, 4}


def test_swapped_role_patterns_fold_by_alpha(parse, plat, rules):
    # x/(1+y) and y/(1+x) are the same pattern after renaming: they fold
    # on text before any e-graph work
    a, _ = alpha_normalize(parse("(/ x (+ 1 y))"))
    b, _ = alpha_normalize(parse("(/ y (+ 1 x))"))
    assert print_expr(a) == print_expr(b)
    out = dedup_pool(
        [RawCandidate(a, 2, {"p"}), RawCandidate(b, 3, {"q"})],
        plat,
        rules,
        LIM,
    )
    assert len(out) == 1
    assert out[0].frequency == 5
    assert out[0].source_kernels == {"p", "q"}


def test_representative_is_cheapest_then_textual(plat, rules, parse):
    pool = [
        raw(parse, "(log (+ x 1))", 1),
        raw(parse, "(log (+ 1 x))", 1),
        raw(parse, "(log1p x)", 1),
    ]
    out = dedup_pool(pool, plat, rules, LIM)
    assert len(out) == 1
    # log1p costs the same as log but saves the add; cheapest spelling wins
    assert print_expr(out[0].pattern) == "(log1p t1)"
    assert out[0].frequency == 3


def test_idempotent_and_order_independent(plat, rules, parse):
    base = [
        raw(parse, "(* (+ 1 x) y)", 5, "a"),
        raw(parse, "(* x (+ 1 y))", 6, "b"),
        raw(parse, "(log (+ 1 x))", 12, "a"),
        raw(parse, "(log (+ x 1))", 15, "c"),
        raw(parse, "(sqrt (+ (* x x) (* y y)))", 2, "d"),
        raw(parse, "(hypot x y)", 1, "d"),
        raw(parse, "(- 1 (* x x))", 9, "e"),
    ]
    ref = dedup_pool(base, plat, rules, LIM)

    def key(cs):
        return [
            (print_expr(c.pattern), c.frequency, tuple(sorted(c.source_kernels)))
            for c in cs
        ]

    # rerunning on the collapsed pool changes nothing
    again = dedup_pool(
        [RawCandidate(c.pattern, c.frequency, set(c.source_kernels)) for c in ref],
        plat,
        rules,
        LIM,
    )
    assert key(again) == key(ref)

    rng = random.Random(3)
    for _ in range(3):
        shuffled = list(base)
        rng.shuffle(shuffled)
        deep = [RawCandidate(c.pattern, c.occurrences, set(c.source_kernels)) for c in shuffled]
        assert key(dedup_pool(deep, plat, rules, LIM)) == key(ref)


def test_classes_expose_sorted_members(plat, rules, parse):
    pool = [
        raw(parse, "(log (+ x 1))", 2, "a"),
        raw(parse, "(log (+ 1 x))", 3, "b"),
    ]
    classes = dedup_classes(pool, plat, rules, LIM)
    assert len(classes) == 1
    rep, members = classes[0]
    assert [print_expr(m.pattern) for m in members] == [
        "(log (+ 1 t1))",
        "(log (+ t1 1))",
    ]
    assert rep.frequency == sum(m.occurrences for m in members)


_PATTERNS = [
    "(log (+ 1 t1))",
    "(log (+ t1 1))",
    "(* (+ 1 t1) t2)",
    "(* t1 (+ 1 t2))",
    "(- 1 (* t1 t1))",
    "(sqrt (+ 1 t1))",
    "(/ (+ 1 t1) (- 1 t1))",
]


@settings(max_examples=15, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(_PATTERNS), st.integers(1, 50)),
        min_size=1,
        max_size=8,
    )
)
def test_frequency_conservation(plat, rules, parse, entries):
    pool = [raw(parse, src, occ, f"k{i}") for i, (src, occ) in enumerate(entries)]
    out = dedup_pool(pool, plat, rules, LIM)
    assert sum(c.frequency for c in out) == sum(o for _, o in entries)
    all_sources = set().union(*(c.source_kernels for c in out))
    assert all_sources == {f"k{i}" for i in range(len(entries))}


def test_merged_classes_agree_numerically(plat, rules, parse):
    # every member must equal the representative under some variable
    # permutation; check by correctly rounded reference on a safe grid
    pool = [
        raw(parse, "(* (+ 1 x) y)", 1, "a"),
        raw(parse, "(* x (+ 1 y))", 1, "b"),
    ]
    classes = dedup_classes(pool, plat, rules, LIM)
    assert len(classes) == 1
    rep, members = classes[0]
    grid = [0.3, 0.7, 1.1, 1.9]
    for m in members:
        matched = False
        for form in canonical_forms(rep.pattern):
            ok = True
            for a in grid:
                for b in grid:
                    pt = {"t1": a, "t2": b}
                    rm = eval_reference(m.pattern, pt, plat)
                    rf = eval_reference(form, pt, plat)
                    if not (
                        rm.status == REF_OK
                        and rf.status == REF_OK
                        and rm.f64 == rf.f64
                    ):
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                matched = True
                break
        assert matched, print_expr(m.pattern)
