"""Behavioral contract: ten checks, one pass/fail line each under pytest -v.

Each check pins a worked example or an end-to-end property of the whole
pipeline, with an explicit wall-clock bound where the behavior is only
valuable if it is also affordable.  The mini-corpus checks share one full
pipeline run (module-scoped fixture).
"""

import json
import random
import time
from importlib import resources

import pytest

from libminer.dedup import Candidate, dedup_classes
from libminer.expr import parse_expr, parse_fpcore, print_expr
from libminer.generation import RawCandidate, cut_expr, generate
from libminer.numerics import measure_on, sample_with_reference
from libminer.platform import expr_cost, extend, extend_all
from libminer.rules import default_rules, definition_rules, expansion_rules, verify_rule
from libminer.selection import (
    SelectionConfig,
    budget_bound,
    build_implication_graph,
    choose_from_graph,
    final_pass,
    run_selection,
    strongly_connected_components,
    urgency,
)
from libminer.superopt import (
    DEFAULT_LIMITS,
    acc_workload,
    best_accuracy,
    optimize,
    reset_optimize_calls,
)

LOG_RATIO = "(log (/ (+ 1 t1) (- 1 t1)))"


def _cand(plat, src, freq):
    p = parse_expr(src, plat.op_table())
    return Candidate(p, freq, {"k"}, size=expr_cost(plat, p))


def _probe_rules(plat, rules):
    return tuple(list(rules) + definition_rules(plat) + expansion_rules())


# -- 1 ----------------------------------------------------------------------


def test_criterion_01_cut_enumeration(plat):
    t0 = time.perf_counter()
    got = {print_expr(p) for p in cut_expr(parse_expr("(log (+ 1 (* x y)))", plat.op_table()))}
    dt = time.perf_counter() - t0
    want = {"(log t1)", "(log (+ 1 t1))", "(log (+ 1 (* t1 t2)))"}
    assert got == want
    assert "(log (+ t1 (* t2 t3)))" not in got
    assert dt < 1.0, f"cut enumeration took {dt:.2f}s"


# -- 2 ----------------------------------------------------------------------


def test_criterion_02_dedup_merges(plat, rules):
    t0 = time.perf_counter()
    tb = plat.op_table()

    def raws(*specs):
        return [
            RawCandidate(parse_expr(s, tb), n, {f"k{i}"})
            for i, (s, n) in enumerate(specs)
        ]

    merge_pairs = [
        (("(/ t1 (+ 1 t2))", 3), ("(/ t2 (+ 1 t1))", 4)),
        (("(* (+ 1 t1) t2)", 5), ("(* t1 (+ 1 t2))", 2)),
        (("(log (+ 1 t1))", 7), ("(log (+ t1 1))", 6)),
    ]
    for a, b in merge_pairs:
        classes = dedup_classes(raws(a, b), plat, rules)
        assert len(classes) == 1, f"{a[0]} / {b[0]} did not merge"
        assert classes[0][0].frequency == a[1] + b[1]

    classes = dedup_classes(
        raws(("(log (+ 1 t1))", 7), ("(log (+ 1 (* t1 t2)))", 6)), plat, rules
    )
    assert len(classes) == 2, "log(1+t1) must not merge with log(1+t1*t2)"
    dt = time.perf_counter() - t0
    assert dt < 30.0, f"dedup checks took {dt:.1f}s"


# -- 3 ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def log1pmd_kernel():
    return parse_fpcore(
        "(FPCore log1pmd (x) :pre (<= -1/1000000 x 1/1000000)"
        " (log (/ (+ 1 x) (- 1 x))))"
    )[0]


def test_criterion_03_error_metric(plat, log1pmd_kernel):
    t0 = time.perf_counter()
    sset = sample_with_reference(log1pmd_kernel, 256, 0, plat)
    naive = measure_on(sset, log1pmd_kernel.body, plat)
    rewrite = measure_on(sset, parse_expr("(* 2 (atanh x))", plat.op_table()), plat)
    dt = time.perf_counter() - t0
    assert naive.mean_bits >= 20.0, f"naive mean_bits {naive.mean_bits:.2f}"
    assert rewrite.mean_bits <= 2.0, f"2*atanh(x) mean_bits {rewrite.mean_bits:.2f}"
    assert dt < 60.0, f"error metric took {dt:.1f}s"


# -- 4 ----------------------------------------------------------------------


def test_criterion_04_counterfactual_utility(plat, rules, log1pmd_kernel):
    t0 = time.perf_counter()
    pat = parse_expr(LOG_RATIO, plat.op_table())
    ext, spec = extend(plat, pat)
    assert spec.cost == max(1.0, expr_cost(plat, pat) / 5.0)

    base_pts = optimize(
        log1pmd_kernel, plat, _probe_rules(plat, rules), DEFAULT_LIMITS, 256, 0
    )
    ext_pts = optimize(
        log1pmd_kernel, ext, _probe_rules(ext, rules), DEFAULT_LIMITS, 256, 0
    )
    assert best_accuracy(ext_pts) == 1.0

    def cost_at_95(pts):
        ok = [p.cost for p in pts if p.accuracy >= 0.95]
        assert ok, "no implementation reaches accuracy 0.95"
        return min(ok)

    assert cost_at_95(ext_pts) < cost_at_95(base_pts)
    dt = time.perf_counter() - t0
    assert dt < 60.0, f"counterfactual took {dt:.1f}s"


# -- 5 ----------------------------------------------------------------------


def test_criterion_05_implication_and_scc(plat, rules):
    t0 = time.perf_counter()
    cfg = SelectionConfig(t1=8, t2=2, n_samples=256)

    def measured(src, freq):
        c = _cand(plat, src, freq)
        c.urgency = urgency(c, [], plat, rules, cfg.search_limits, cfg.n_samples)
        return c

    f = measured("(log (+ 1 t1))", 10)
    g = measured("(log (+ 1 (* t1 t2)))", 4)
    graph = build_implication_graph([f, g], [], plat, rules, cfg)
    assert graph.edges == {(0, 1), (1, 0)}, f"log pair edges: {graph.edges}"
    comps = strongly_connected_components(2, graph.edges)
    assert len(comps) == 1 and comps[0] == [0, 1]
    assert len(choose_from_graph(graph)) == 1

    p6 = measured("(pow t1 6)", 5)
    c6 = measured("(pow (cos t1) 6)", 5)
    graph = build_implication_graph([p6, c6], [], plat, rules, cfg)
    assert graph.edges == {(0, 1)}, f"pow pair edges: {graph.edges}"
    chosen = choose_from_graph(graph)
    assert [print_expr(c.pattern) for c in chosen] == ["(pow t1 6)"]

    rng = random.Random(20_240_822)
    for _ in range(200):
        n = rng.randint(1, 12)
        edges = {
            (rng.randrange(n), rng.randrange(n))
            for _ in range(rng.randint(0, 3 * n))
        }
        edges = {(a, b) for a, b in edges if a != b}
        comps = strongly_connected_components(n, edges)
        # membership partition against brute-force reachability
        reach = [[i == j for j in range(n)] for i in range(n)]
        for a, b in edges:
            reach[a][b] = True
        for k in range(n):
            for i in range(n):
                if reach[i][k]:
                    for j in range(n):
                        if reach[k][j]:
                            reach[i][j] = True
        brute = []
        seen = set()
        for i in range(n):
            if i in seen:
                continue
            comp = [j for j in range(n) if reach[i][j] and reach[j][i]]
            seen.update(comp)
            brute.append(sorted(comp))
        brute.sort(key=lambda c: c[0])
        assert comps == brute
        # source set: components no outside node reaches
        comp_of = {}
        for ci, comp in enumerate(comps):
            for v in comp:
                comp_of[v] = ci
        got_sources = {
            ci
            for ci, comp in enumerate(comps)
            if not any(
                comp_of[a] != ci for a, b in edges if comp_of[b] == ci
            )
        }
        brute_sources = {
            ci
            for ci, comp in enumerate(comps)
            if not any(
                reach[o][comp[0]] for o in range(n) if comp_of[o] != ci
            )
        }
        assert got_sources == brute_sources
    dt = time.perf_counter() - t0
    assert dt < 300.0, f"implication/SCC took {dt:.1f}s"


# -- 6 + 8: one full default-limits pipeline run ----------------------------


@pytest.fixture(scope="module")
def mini_run(plat, rules):
    corpus = (resources.files("libminer") / "corpus" / "projections.fpcore").read_text()
    kernels = parse_fpcore(corpus, plat.op_table())
    assert len(kernels) == 10
    cfg = SelectionConfig()
    reset_optimize_calls()
    t0 = time.perf_counter()
    raw = generate(kernels, plat, tuple(rules))
    classes = dedup_classes(raw, plat, rules)
    pool = [c for c, _m in classes]
    state = run_selection(pool, kernels, plat, rules, cfg)
    rep = final_pass(state, kernels, plat, rules, cfg)
    dt = time.perf_counter() - t0
    ratio_class = [
        c
        for c, members in classes
        if any(print_expr(m.pattern) == LOG_RATIO for m in members)
    ]
    assert len(ratio_class) == 1
    return {
        "kernels": kernels,
        "cfg": cfg,
        "state": state,
        "rep": rep,
        "seconds": dt,
        "ratio_rep": print_expr(ratio_class[0].pattern),
    }


def test_criterion_06_end_to_end_mini_corpus(mini_run):
    state, rep = mini_run["state"], mini_run["rep"]
    assert state.rounds, "selection recorded no rounds"
    assert mini_run["ratio_rep"] in state.rounds[0].chosen, (
        f"round 1 chose {state.rounds[0].chosen}"
    )
    ratio = next(
        c for c in rep.selected if print_expr(c.pattern) == mini_run["ratio_rep"]
    )
    assert ratio.uses is not None and ratio.uses >= 5, f"uses={ratio.uses}"
    assert mini_run["seconds"] <= 600.0, f"pipeline took {mini_run['seconds']:.0f}s"


def test_criterion_08_probe_budget(mini_run):
    rep, cfg = mini_run["rep"], mini_run["cfg"]
    bound = budget_bound(
        len(mini_run["kernels"]), len(mini_run["state"].rounds), cfg
    )
    assert rep.optimize_calls <= bound, f"{rep.optimize_calls} > {bound}"


# -- 7 ----------------------------------------------------------------------


def test_criterion_07_determinism(tmp_path):
    from libminer.cli import main

    corpus = tmp_path / "tiny.fpcore"
    corpus.write_text(
        "(FPCore lr (x) :pre (<= -1/2 x 1/2) (log (/ (+ 1 x) (- 1 x))))\n"
        "(FPCore nrm (u v) (sqrt (+ (* u u) (* v v))))\n"
    )
    args = [
        "learn", "--corpus", str(corpus), "--seed", "7", "--samples", "64",
        "--max-nodes", "4000", "--max-iters", "6", "--jobs", "1",
        "--t1", "8", "--t2", "2", "--target-size", "2",
    ]
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        assert main(args + ["--out", str(out)]) == 0
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1], "report.json differs between identical runs"
    assert json.loads(outs[0])  # sanity: the identical bytes are real JSON


# -- 9 ----------------------------------------------------------------------


def test_criterion_09_rule_soundness(rules):
    t0 = time.perf_counter()
    shipped = list(rules) + expansion_rules()
    bad = []
    for r in shipped:
        agree, checked = verify_rule(r, n=10_000, seed=0, min_agree_bits=100)
        if agree != checked or checked < 10_000:
            bad.append((r.name, agree, checked))
    assert not bad, f"rules failing agreement: {bad}"
    dt = time.perf_counter() - t0
    assert dt < 300.0, f"rule soundness took {dt:.1f}s"


# -- 10 ---------------------------------------------------------------------


def test_criterion_10_greedy_oracle(plat, rules):
    t0 = time.perf_counter()
    kernels = parse_fpcore(
        """
(FPCore ka (x) :pre (<= -1/2 x 1/2) (* 3 (log (/ (+ 1 x) (- 1 x)))))
(FPCore kb (x) :pre (<= 1 x 1000000) (- (sqrt (+ x 1)) (sqrt x)))
(FPCore kc (x) :pre (<= -1/2 x 1/2) (+ 1 (log (/ (+ 1 x) (- 1 x)))))
"""
    )
    pool = [
        _cand(plat, LOG_RATIO, 20),
        _cand(plat, "(/ (+ 1 t1) (- 1 t1))", 6),
        _cand(plat, "(- (sqrt (+ t1 1)) (sqrt t1))", 10),
        _cand(plat, "(sqrt (+ t1 1))", 4),
        _cand(plat, "(* t2 (log (/ (+ 1 t1) (- 1 t1))))", 5),
        _cand(plat, "(+ t1 t2)", 3),
    ]
    cfg = SelectionConfig(t1=6, t2=3, target_size=3, n_samples=64)

    def workload_acc(selected):
        ext = extend_all(plat, [c.pattern for c in selected])
        return acc_workload(
            kernels, ext, _probe_rules(ext, rules), cfg.search_limits,
            cfg.n_samples, cfg.seed,
        )

    state = run_selection(pool, kernels, plat, rules, cfg)
    batched_acc = workload_acc(state.selected)

    # one-at-a-time greedy oracle, exhaustive over the pool at each step
    chosen: list = []
    best_acc = workload_acc(chosen)
    while len(chosen) < cfg.target_size:
        step = [
            (workload_acc(chosen + [c]), print_expr(c.pattern), c)
            for c in pool
            if c not in chosen
        ]
        acc, _text, c = max(step, key=lambda s: (s[0], s[1]))
        if acc <= best_acc + 1e-9:
            break
        chosen.append(c)
        best_acc = acc

    assert batched_acc >= best_acc - 0.02, (
        f"batched {batched_acc:.4f} vs greedy oracle {best_acc:.4f}"
    )
    dt = time.perf_counter() - t0
    assert dt < 300.0, f"greedy-oracle check took {dt:.1f}s"
