"""Primitive selection: decide which candidate patterns earn a place in the
library.

Each round ranks the surviving pool by a cheap static score, measures how
badly the top slice still needs help (urgency), batches the leaders, prunes
batch members that another member already makes easy (the implication
graph), and appends the survivors to the selected set.  A final pass
re-optimizes the whole workload with and without the chosen primitives and
assembles the evidence report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from .dedup import Candidate
from .expr import App, Expr, Kernel, Var, count_ops, free_vars, make_num, print_expr
from .numerics import SamplingError
from .platform import Platform, candidate_op_name, extend_all
from .rules import Rule, definition_rules, expansion_rules
from .superopt import (
    DEFAULT_LIMITS,
    ParetoPoint,
    SearchLimits,
    best_accuracy,
    note_optimize_calls,
    optimize,
    optimize_calls,
    optimize_with_graph,
)
from .util import parallel_map

# Urgency and implication probes run hundreds of times per round; a capped
# graph finds the same witnesses at a fraction of the full-search cost.
SELECT_LIMITS = SearchLimits(max_nodes=6_000, max_iters=8)

# Implication probes sample inside a large but bounded box so that a
# composed pattern (think t1*t2 feeding a primitive) is not judged on
# inputs whose intermediate products overflow.
_IMPLICATION_BOX = "1e100"


@dataclass(frozen=True)
class SelectionConfig:
    t1: int = 625
    t2: int = 25
    implication_threshold: float = 0.95
    target_size: int = 10
    min_uses: int = 1
    # Sizing guide: roughly this fraction of a batch survives the
    # implication pruning, which is how t2 was picked relative to t1.
    expected_alpha: float = 0.25
    n_samples: int = 256
    seed: int = 0
    jobs: int = 1
    search_limits: SearchLimits = SELECT_LIMITS
    final_limits: SearchLimits = DEFAULT_LIMITS

    def __post_init__(self) -> None:
        if self.t1 < 1 or self.t2 < 1:
            raise ValueError("t1 and t2 must be positive")
        if self.t2 > self.t1:
            raise ValueError("t2 cannot exceed t1")
        if not 0.0 < self.implication_threshold <= 1.0:
            raise ValueError("implication_threshold must be in (0, 1]")
        if self.target_size < 1:
            raise ValueError("target_size must be positive")
        if self.min_uses < 0:
            raise ValueError("min_uses cannot be negative")


@dataclass
class ImplicationGraph:
    """Redundancy structure over one batch.  Edge (i, j) means member i
    makes member j easy: with i available as a primitive, optimizing j's
    pattern reaches the accuracy threshold through a term that calls i."""

    members: list[Candidate]
    edges: set[tuple[int, int]] = field(default_factory=set)


@dataclass
class RoundRecord:
    number: int
    ranked: int
    batch: list[str]
    edges: list[tuple[str, str]]
    chosen: list[str]
    flagged: list[str]
    workload_accuracy: float


@dataclass
class SelectionState:
    selected: list[Candidate] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    # entry 0 is the baseline platform; one entry per round after that
    workload_acc_history: list[float] = field(default_factory=list)


def stage1_rank(pool: Sequence[Candidate], cfg: SelectionConfig) -> list[Candidate]:
    """Top t1 by frequency density.  No measurement, so it is cheap enough
    to run over the whole pool every round."""
    ranked = sorted(
        pool,
        key=lambda c: (
            -(c.frequency / c.size),
            -c.frequency,
            print_expr(c.pattern),
        ),
    )
    return ranked[: cfg.t1]


def _pattern_kernel(pattern: Expr, pre: Expr | None = None) -> Kernel:
    return Kernel("candidate", tuple(free_vars(pattern)), pattern, pre)


def _box_precondition(names: Sequence[str]) -> Expr:
    hi = make_num(_IMPLICATION_BOX)
    lo = App("neg", (hi,))
    clauses = tuple(App("<=", (lo, Var(n), hi)) for n in names)
    return clauses[0] if len(clauses) == 1 else App("and", clauses)


def _urgency_task(arg: tuple) -> tuple[float, bool, frozenset]:
    pattern, ext, rules, lim, n_samples, seed = arg
    try:
        pts, g = optimize_with_graph(
            _pattern_kernel(pattern), ext, rules, lim, n_samples, seed
        )
    except SamplingError:
        return 0.0, True, frozenset()
    return 1.0 - best_accuracy(pts), False, g.node_ops()


def urgency(
    c: Candidate,
    selected: Sequence[Candidate],
    base: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = SELECT_LIMITS,
    n_samples: int = 256,
    seed: int = 0,
) -> float:
    """How far the pattern still sits from an accurate implementation on
    the current platform: 1 - best frontier accuracy of the pattern
    optimized as its own kernel against base extended with the selected
    set.  A pattern whose domain cannot be sampled scores 0."""
    ext = extend_all(base, [s.pattern for s in selected])
    rr = list(rules) + definition_rules(ext) + expansion_rules()
    u, _, _ = _urgency_task((c.pattern, ext, rr, lim, n_samples, seed))
    return u


def full_score(c: Candidate) -> float:
    """frequency * urgency / size; zero until urgency is measured."""
    u = c.urgency if c.urgency is not None else 0.0
    return c.frequency * u / c.size


def _implication_task(arg: tuple) -> tuple[bool, frozenset]:
    f_pat, g_pat, s_pats, base, rules, lim, n_samples, seed, threshold = arg
    ext = extend_all(base, list(s_pats) + [f_pat])
    fname = candidate_op_name(f_pat)
    rr = list(rules) + definition_rules(ext) + expansion_rules()
    k = _pattern_kernel(g_pat, _box_precondition(free_vars(g_pat)))
    try:
        pts, g = optimize_with_graph(k, ext, rr, lim, n_samples, seed)
    except SamplingError:
        return False, frozenset()
    edge = any(
        p.accuracy >= threshold and count_ops(p.expr).get(fname, 0) > 0 for p in pts
    )
    return edge, g.node_ops()


def build_implication_graph(
    batch: Sequence[Candidate],
    selected: Sequence[Candidate],
    base: Platform,
    rules: Sequence[Rule],
    cfg: SelectionConfig,
) -> ImplicationGraph:
    """Probe every ordered pair (f, g): does adding f as a primitive let
    g's pattern reach the accuracy threshold via a term that uses f?

    The edge demands an f-using witness on the frontier, not merely a high
    best accuracy, so a pattern that is already easy on the base platform
    does not spuriously imply everything around it.
    """
    members = list(batch)
    s_pats = tuple(s.pattern for s in selected)
    pairs = [
        (i, j)
        for i in range(len(members))
        for j in range(len(members))
        if i != j
    ]
    tasks = [
        (
            members[i].pattern,
            members[j].pattern,
            s_pats,
            base,
            tuple(rules),
            cfg.search_limits,
            cfg.n_samples,
            cfg.seed,
            cfg.implication_threshold,
        )
        for i, j in pairs
    ]
    hits = parallel_map(_implication_task, tasks, cfg.jobs)
    if cfg.jobs > 1 and len(tasks) > 1:
        note_optimize_calls(len(tasks))
    return ImplicationGraph(
        members, {p for p, (h, _ops) in zip(pairs, hits) if h}
    )


def strongly_connected_components(
    n: int, edges: set[tuple[int, int]]
) -> list[list[int]]:
    """Tarjan's algorithm, iterative.  Components are returned with members
    sorted, ordered by smallest member."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in sorted(edges):
        adj[a].append(b)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for start in range(n):
        if index[start] != -1:
            continue
        work = [(start, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            while pi < len(adj[v]):
                w = adj[v][pi]
                pi += 1
                if index[w] == -1:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    comps.sort(key=lambda c: c[0])
    return comps


def choose_from_graph(graph: ImplicationGraph) -> list[Candidate]:
    """Condense the batch to its implication SCCs and keep one member per
    source component (no incoming edges from outside).  Everything a source
    implies can be recovered from it, so only sources are worth buying."""
    members = graph.members
    if not members:
        return []
    comps = strongly_connected_components(len(members), graph.edges)
    comp_of = {}
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci
    has_incoming = set()
    for a, b in graph.edges:
        if comp_of[a] != comp_of[b]:
            has_incoming.add(comp_of[b])

    def pick_key(i: int):
        c = members[i]
        return (-full_score(c), -c.frequency, print_expr(c.pattern))

    chosen = [
        members[min(comp, key=pick_key)]
        for ci, comp in enumerate(comps)
        if ci not in has_incoming
    ]
    chosen.sort(key=lambda c: (-full_score(c), -c.frequency, print_expr(c.pattern)))
    return chosen


def _workload_task(arg: tuple) -> tuple[float, frozenset]:
    kernel, plat, rules, lim, n_samples, seed = arg
    try:
        pts, g = optimize_with_graph(kernel, plat, rules, lim, n_samples, seed)
    except SamplingError:
        return 0.0, frozenset()
    return best_accuracy(pts), g.node_ops()


def _measure_workload(
    kernels: Sequence[Kernel],
    plat: Platform,
    rules: Sequence[Rule],
    cfg: SelectionConfig,
) -> float:
    if not kernels:
        return 0.0
    rr = tuple(list(rules) + definition_rules(plat) + expansion_rules())
    tasks = [
        (k, plat, rr, cfg.search_limits, cfg.n_samples, cfg.seed) for k in kernels
    ]
    accs = parallel_map(_workload_task, tasks, cfg.jobs)
    if cfg.jobs > 1 and len(tasks) > 1:
        note_optimize_calls(len(tasks))
    return sum(a for a, _ops in accs) / len(accs)


# ---------------------------------------------------------------------------
# probe memoization
#
# Probes repeat across rounds with only the selected set growing.  A new
# primitive changes a probe's outcome only if its definition rule can fire,
# and a rule whose lhs mentions an operator absent from the probe's saturated
# graph never matches: the graph evolves identically with or without it.
# Caching on that screen keeps reruns bit-identical to fresh probes while
# skipping most of the per-round work.


@dataclass
class _ProbeMemo:
    value: float  # urgency, edge truth (0/1), or workload accuracy
    flagged: bool
    graph_ops: frozenset
    n_selected: int


def _can_fire(new_patterns: Sequence[Expr], graph_ops: frozenset) -> bool:
    return any(set(count_ops(p)) <= graph_ops for p in new_patterns)


def _memo_fresh(
    m: _ProbeMemo, selected: Sequence[Candidate], never_reprobe: bool
) -> bool:
    if never_reprobe or m.flagged:
        return True
    new = [s.pattern for s in selected[m.n_selected :]]
    return not _can_fire(new, m.graph_ops)


def _cached_implication_graph(
    batch: Sequence[Candidate],
    selected: Sequence[Candidate],
    base: Platform,
    rules: Sequence[Rule],
    cfg: SelectionConfig,
    urg_memo: dict,
    edge_memo: dict,
) -> ImplicationGraph:
    """build_implication_graph with two probe savers: pairs whose earlier
    verdict the new primitives cannot change are reused, and a pair whose
    implier mentions an operator outside the target's saturated graph is an
    immediate non-edge (its definition rule has nothing to match)."""
    members = list(batch)
    s_pats = tuple(s.pattern for s in selected)
    texts = [print_expr(c.pattern) for c in members]
    pairs = [
        (i, j)
        for i in range(len(members))
        for j in range(len(members))
        if i != j
    ]
    edges: set[tuple[int, int]] = set()
    todo: list[tuple[int, int]] = []
    for i, j in pairs:
        key = (texts[i], texts[j])
        em = edge_memo.get(key)
        if em is not None:
            if _memo_fresh(em, selected, never_reprobe=False):
                em.n_selected = len(selected)
                if em.value:
                    edges.add((i, j))
            else:
                todo.append((i, j))
            continue
        gm = urg_memo.get(texts[j])
        if (
            gm is not None
            and not gm.flagged
            and not set(count_ops(members[i].pattern)) <= gm.graph_ops
        ):
            continue
        todo.append((i, j))
    tasks = [
        (
            members[i].pattern,
            members[j].pattern,
            s_pats,
            base,
            tuple(rules),
            cfg.search_limits,
            cfg.n_samples,
            cfg.seed,
            cfg.implication_threshold,
        )
        for i, j in todo
    ]
    hits = parallel_map(_implication_task, tasks, cfg.jobs)
    if cfg.jobs > 1 and len(tasks) > 1:
        note_optimize_calls(len(tasks))
    for (i, j), (h, ops) in zip(todo, hits):
        edge_memo[(texts[i], texts[j])] = _ProbeMemo(
            float(h), False, ops, len(selected)
        )
        if h:
            edges.add((i, j))
    return ImplicationGraph(members, edges)


def run_selection(
    pool: Sequence[Candidate],
    kernels: Sequence[Kernel],
    base: Platform,
    rules: Sequence[Rule],
    cfg: SelectionConfig = SelectionConfig(),
    progress: Optional[Callable[[str], None]] = None,
    timings: Optional[dict] = None,
) -> SelectionState:
    """Grow the selected set round by round until it reaches target_size or
    no candidate scores above zero.  Records every round."""
    import time

    def say(msg: str) -> None:
        if progress is not None:
            progress(msg)

    def charge(stage: str, t0: float) -> float:
        t1 = time.perf_counter()
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + (t1 - t0)
        return t1

    state = SelectionState()
    if not pool:
        return state
    remaining = list(pool)
    urg_memo: dict[str, _ProbeMemo] = {}
    edge_memo: dict[tuple[str, str], _ProbeMemo] = {}
    work_memo: dict[str, _ProbeMemo] = {}

    def text(c: Candidate) -> str:
        return print_expr(c.pattern)

    def workload_acc() -> float:
        if not kernels:
            return 0.0
        plat = extend_all(base, [s.pattern for s in state.selected])
        rr = tuple(list(rules) + definition_rules(plat) + expansion_rules())
        todo = []
        for k in kernels:
            m = work_memo.get(k.name)
            if m is not None and _memo_fresh(
                m, state.selected, never_reprobe=m.value >= 1.0
            ):
                m.n_selected = len(state.selected)
            else:
                todo.append(k)
        tasks = [
            (k, plat, rr, cfg.search_limits, cfg.n_samples, cfg.seed)
            for k in todo
        ]
        results = parallel_map(_workload_task, tasks, cfg.jobs)
        if cfg.jobs > 1 and len(tasks) > 1:
            note_optimize_calls(len(tasks))
        for k, (acc, ops) in zip(todo, results):
            work_memo[k.name] = _ProbeMemo(acc, False, ops, len(state.selected))
        return sum(work_memo[k.name].value for k in kernels) / len(kernels)

    base_acc = workload_acc()
    state.workload_acc_history.append(base_acc)
    say(f"baseline workload accuracy {base_acc:.4f}")

    while len(state.selected) < cfg.target_size and remaining:
        t0 = time.perf_counter()
        number = len(state.rounds) + 1
        ranked = stage1_rank(remaining, cfg)

        ext = extend_all(base, [s.pattern for s in state.selected])
        rr = tuple(list(rules) + definition_rules(ext) + expansion_rules())
        todo = []
        for c in ranked:
            m = urg_memo.get(text(c))
            if m is not None and _memo_fresh(
                m, state.selected, never_reprobe=m.value == 0.0
            ):
                m.n_selected = len(state.selected)
            else:
                todo.append(c)
        tasks = [
            (c.pattern, ext, rr, cfg.search_limits, cfg.n_samples, cfg.seed)
            for c in todo
        ]
        results = parallel_map(_urgency_task, tasks, cfg.jobs)
        if cfg.jobs > 1 and len(tasks) > 1:
            note_optimize_calls(len(tasks))
        for c, (u, flag, ops) in zip(todo, results):
            urg_memo[text(c)] = _ProbeMemo(u, flag, ops, len(state.selected))
        flagged = []
        for c in ranked:
            m = urg_memo[text(c)]
            c.urgency = m.value
            c.score = full_score(c)
            if m.flagged:
                flagged.append(text(c))
        batch = sorted(
            (c for c in ranked if c.score > 0.0),
            key=lambda c: (-c.score, -c.frequency, print_expr(c.pattern)),
        )[: cfg.t2]
        t0 = charge("selection stage 1", t0)
        if not batch:
            state.rounds.append(
                RoundRecord(
                    number=number,
                    ranked=len(ranked),
                    batch=[],
                    edges=[],
                    chosen=[],
                    flagged=flagged,
                    workload_accuracy=state.workload_acc_history[-1],
                )
            )
            say(f"round {number}: no candidate scores above zero; stopping")
            break
        say(
            f"round {number}: ranked {len(ranked)} (probed {len(todo)}), "
            f"batch {len(batch)}, top {print_expr(batch[0].pattern)}"
        )

        graph = _cached_implication_graph(
            batch, state.selected, base, rules, cfg, urg_memo, edge_memo
        )
        chosen = choose_from_graph(graph)
        state.selected.extend(chosen)
        chosen_texts = {print_expr(c.pattern) for c in chosen}
        remaining = [c for c in remaining if print_expr(c.pattern) not in chosen_texts]

        acc = workload_acc()
        state.workload_acc_history.append(acc)
        state.rounds.append(
            RoundRecord(
                number=number,
                ranked=len(ranked),
                batch=[text(c) for c in batch],
                edges=sorted(
                    (text(graph.members[a]), text(graph.members[b]))
                    for a, b in graph.edges
                ),
                chosen=[text(c) for c in chosen],
                flagged=flagged,
                workload_accuracy=acc,
            )
        )
        charge("selection stage 2", t0)
        say(
            f"round {number}: chose {len(chosen)} "
            f"({', '.join(text(c) for c in chosen)}); workload accuracy {acc:.4f}"
        )
    return state


# ---------------------------------------------------------------------------
# final pass


@dataclass
class KernelReport:
    name: str
    frontier_base: list[ParetoPoint]
    frontier_ext: list[ParetoPoint]
    min_bits_base: float
    min_bits_ext: float
    # threshold text ("0.95") -> {"base": cost|None, "extended": cost|None}
    cost_at_accuracy: dict[str, dict[str, Optional[float]]]


@dataclass
class FinalReport:
    config: SelectionConfig
    selected: list[Candidate]
    proposed: list[Candidate]
    kernels: list[KernelReport]
    state: SelectionState
    optimize_calls: int


ACC_THRESHOLDS = [t / 100 for t in range(50, 100)]


def _cost_at(points: Sequence[ParetoPoint], threshold: float) -> Optional[float]:
    costs = [p.cost for p in points if p.accuracy >= threshold]
    return min(costs) if costs else None


def _final_task(arg: tuple) -> tuple[list[ParetoPoint], list[ParetoPoint]]:
    kernel, base, ext, rules_base, rules_ext, lim, n_samples, seed = arg
    base_pts = optimize(kernel, base, rules_base, lim, n_samples, seed)
    ext_pts = optimize(kernel, ext, rules_ext, lim, n_samples, seed)
    return base_pts, ext_pts


def final_pass(
    state: SelectionState,
    kernels: Sequence[Kernel],
    base: Platform,
    rules: Sequence[Rule],
    cfg: SelectionConfig = SelectionConfig(),
    progress: Optional[Callable[[str], None]] = None,
) -> FinalReport:
    """Re-optimize every kernel against the extended and the bare platform
    at full limits, count how often each selected primitive appears on the
    frontiers, and drop primitives used fewer than min_uses times."""
    ext = extend_all(base, [c.pattern for c in state.selected])
    rules_base = tuple(list(rules) + definition_rules(base) + expansion_rules())
    rules_ext = tuple(list(rules) + definition_rules(ext) + expansion_rules())
    tasks = [
        (k, base, ext, rules_base, rules_ext, cfg.final_limits, cfg.n_samples, cfg.seed)
        for k in kernels
    ]
    results = parallel_map(_final_task, tasks, cfg.jobs)
    if cfg.jobs > 1 and len(tasks) > 1:
        note_optimize_calls(2 * len(tasks))

    uses = {candidate_op_name(c.pattern): 0 for c in state.selected}
    reports = []
    for k, (base_pts, ext_pts) in zip(kernels, results):
        for p in ext_pts:
            for op, cnt in count_ops(p.expr).items():
                if op in uses:
                    uses[op] += cnt
        table = {
            f"{t:.2f}": {
                "base": _cost_at(base_pts, t),
                "extended": _cost_at(ext_pts, t),
            }
            for t in ACC_THRESHOLDS
        }
        reports.append(
            KernelReport(
                name=k.name,
                frontier_base=base_pts,
                frontier_ext=ext_pts,
                min_bits_base=min((p.mean_bits for p in base_pts), default=64.0),
                min_bits_ext=min((p.mean_bits for p in ext_pts), default=64.0),
                cost_at_accuracy=table,
            )
        )
        if progress is not None:
            progress(f"final: {k.name}")

    for c in state.selected:
        c.uses = uses[candidate_op_name(c.pattern)]
    proposed = [c for c in state.selected if (c.uses or 0) >= cfg.min_uses]
    return FinalReport(
        config=cfg,
        selected=list(state.selected),
        proposed=proposed,
        kernels=reports,
        state=state,
        optimize_calls=optimize_calls(),
    )


def budget_bound(n_kernels: int, rounds: int, cfg: SelectionConfig) -> int:
    """Upper bound on optimize() calls for a full selection + final pass."""
    return n_kernels + rounds * (cfg.t1 + cfg.t2 * cfg.t2) + 2 * n_kernels
