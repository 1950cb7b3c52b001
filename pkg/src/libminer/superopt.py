"""Equality-saturation superoptimizer.

Wraps the core e-graph engine with expression interning, rule compilation,
syntactic side-condition discharge, bounded extraction, and the Pareto
(cost, accuracy) optimization of a kernel against a platform.  Side
conditions are discharged only from structural facts (literal signs, x*x,
exp(...) and friends); there is no interval or domain analysis, so guarded
rewrites simply stay off when positivity is not syntactically evident.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .coredefs import COND_KINDS, EG_FIRST_OP, EG_LIT, EG_VAR
from .core import EGraphCore
from .expr import (
    App,
    Const,
    Expr,
    Kernel,
    Num,
    Var,
    expr_size,
    format_fraction,
    free_vars,
    num_fraction,
    print_expr,
)
from .numerics import ErrorReport, accuracy, measure_on, sample_with_reference
from .platform import LEAF_COST, Platform, PlatformError, default_platform
from .rules import Rule

_OPTIMIZE_CALLS = 0


def optimize_calls() -> int:
    return _OPTIMIZE_CALLS


def reset_optimize_calls() -> None:
    global _OPTIMIZE_CALLS
    _OPTIMIZE_CALLS = 0


def note_optimize_calls(n: int) -> None:
    """Fold in calls dispatched to worker processes, whose own counters
    are lost when the pool tears down."""
    global _OPTIMIZE_CALLS
    _OPTIMIZE_CALLS += n


@dataclass(frozen=True)
class SearchLimits:
    max_nodes: int = 20_000
    max_iters: int = 8
    max_extracted: int = 50
    harvest_cap: int = 1_000


DEFAULT_LIMITS = SearchLimits()


@dataclass(frozen=True)
class ParetoPoint:
    expr: Expr
    cost: float
    accuracy: float
    mean_bits: float
    max_bits: float


_FACT_DEPTH = 5


class EGraph:
    """One saturation session: an e-graph plus the interning tables that
    map expressions and rules onto the core's integer encoding."""

    def __init__(
        self,
        platform: Platform | None = None,
        rules: Sequence[Rule] = (),
        limits: SearchLimits = DEFAULT_LIMITS,
    ) -> None:
        self.platform = platform if platform is not None else default_platform()
        self.limits = limits
        self.core = EGraphCore()
        # operator interning: core op ints are EG_FIRST_OP + local index
        self._ops: list[str] = []
        self._op_index: dict[str, int] = {}
        self._op_costs: list[float] = [0.0, 0.0]  # EG_VAR, EG_LIT padding
        self._op_arity: dict[int, int] = {}
        for name, spec in self.platform.ops.items():
            opi = EG_FIRST_OP + len(self._ops)
            self._ops.append(name)
            self._op_index[name] = opi
            self._op_costs.append(spec.cost)
            self._op_arity[opi] = spec.arity
        # leaf payloads
        self._vars: list[str] = []
        self._var_index: dict[str, int] = {}
        self._lits: list[tuple[str, object]] = []
        self._lit_index: dict[tuple[str, object], int] = {}
        # conditions and compiled rules
        self._cond_table: list[tuple[tuple[int, int], ...]] = []
        self._rules = [self._compile_rule(r) for r in rules]
        self._fact_memo: dict[tuple[int, int], bool] = {}
        self._fact_gen = (-1, -1)
        self.stats: dict = {}
        self.root = -1

    # -- interning --

    def _op_id(self, name: str) -> int:
        opi = self._op_index.get(name)
        if opi is None:
            raise PlatformError(f"operator {name!r} not in platform")
        return opi

    def _var_id(self, name: str) -> int:
        vid = self._var_index.get(name)
        if vid is None:
            vid = len(self._vars)
            self._vars.append(name)
            self._var_index[name] = vid
        return vid

    def _lit_id(self, key: tuple[str, object]) -> int:
        lid = self._lit_index.get(key)
        if lid is None:
            lid = len(self._lits)
            self._lits.append(key)
            self._lit_index[key] = lid
        return lid

    # -- expressions --

    def add(self, e: Expr) -> int:
        if isinstance(e, Var):
            return self.core.add_node(EG_VAR, self._var_id(e.name))
        if isinstance(e, Num):
            return self.core.add_node(EG_LIT, self._lit_id(("f", num_fraction(e))))
        if isinstance(e, Const):
            return self.core.add_node(EG_LIT, self._lit_id(("c", e.name)))
        kids = [self.add(a) for a in e.args]
        kids += [-1] * (3 - len(kids))
        return self.core.add_node(self._op_id(e.op), kids[0], kids[1], kids[2])

    def find_expr(self, e: Expr) -> int:
        """Class of e, or -1 when any part of it is absent from the graph."""
        if isinstance(e, Var):
            vid = self._var_index.get(e.name)
            return -1 if vid is None else self.core.lookup(EG_VAR, vid)
        if isinstance(e, Num):
            lid = self._lit_index.get(("f", num_fraction(e)))
            return -1 if lid is None else self.core.lookup(EG_LIT, lid)
        if isinstance(e, Const):
            lid = self._lit_index.get(("c", e.name))
            return -1 if lid is None else self.core.lookup(EG_LIT, lid)
        kids = []
        for a in e.args:
            cid = self.find_expr(a)
            if cid < 0:
                return -1
            kids.append(cid)
        kids += [-1] * (3 - len(kids))
        opi = self._op_index.get(e.op)
        if opi is None:
            return -1
        return self.core.lookup(opi, kids[0], kids[1], kids[2])

    # -- rules --

    def _compile_pattern(
        self, e: Expr, var_ids: dict[str, int]
    ) -> tuple[list[tuple[int, int, int, int]], int]:
        nodes: list[tuple[int, int, int, int]] = []

        def go(x: Expr) -> int:
            if isinstance(x, Var):
                vid = var_ids.setdefault(x.name, len(var_ids))
                return -(vid + 2)
            if isinstance(x, Num):
                nodes.append((EG_LIT, self._lit_id(("f", num_fraction(x))), -1, -1))
                return len(nodes) - 1
            if isinstance(x, Const):
                nodes.append((EG_LIT, self._lit_id(("c", x.name)), -1, -1))
                return len(nodes) - 1
            refs = [go(a) for a in x.args]
            refs += [-1] * (3 - len(refs))
            nodes.append((self._op_id(x.op), refs[0], refs[1], refs[2]))
            return len(nodes) - 1

        root = go(e)
        return nodes, root

    def _compile_rule(self, r: Rule) -> tuple:
        var_ids: dict[str, int] = {}
        lhs_nodes, lhs_root = self._compile_pattern(r.lhs, var_ids)
        rhs_nodes, rhs_root = self._compile_pattern(r.rhs, var_ids)
        cond_id = -1
        if r.conds:
            conds = tuple((COND_KINDS[k], var_ids[v]) for k, v in r.conds)
            cond_id = len(self._cond_table)
            self._cond_table.append(conds)
        return (len(var_ids), lhs_nodes, lhs_root, rhs_nodes, rhs_root, cond_id)

    # -- syntactic side conditions --

    def _lit_fact(self, kind: int, payload: tuple[str, object]) -> bool:
        if payload[0] == "c":  # PI or E
            return True
        frac = payload[1]
        assert isinstance(frac, Fraction)
        if kind == 0:
            return frac > 0
        if kind == 1:
            return frac >= 0
        return frac != 0

    def _has_even_int_lit(self, cid: int) -> bool:
        for op, a, _b, _c in self.core.class_nodes(cid):
            if op == EG_LIT:
                pay = self._lits[a]
                if pay[0] == "f":
                    frac = pay[1]
                    assert isinstance(frac, Fraction)
                    if frac.denominator == 1 and frac.numerator % 2 == 0:
                        return True
        return False

    def _fact(self, kind: int, cid: int, depth: int, stack: set) -> bool:
        # kind: 0 positive, 1 nonneg, 2 nonzero
        cid = self.core.find(cid)
        key = (kind, cid)
        hit = self._fact_memo.get(key)
        if hit is not None:
            return hit
        if depth <= 0 or key in stack:
            return False
        stack.add(key)
        out = False
        for node in self.core.class_nodes(cid):
            if self._node_fact(kind, node, depth, stack):
                out = True
                break
        stack.discard(key)
        self._fact_memo[key] = out
        return out

    def _node_fact(self, kind: int, node: tuple, depth: int, stack: set) -> bool:
        op, a, b, _c = node
        if op == EG_LIT:
            return self._lit_fact(kind, self._lits[a])
        if op == EG_VAR:
            return False
        name = self._ops[op - EG_FIRST_OP]
        d = depth - 1
        if kind == 0:
            if name in ("exp", "cosh"):
                return True
            if name == "sqrt":
                return self._fact(0, a, d, stack)
            if name == "fabs":
                return self._fact(2, a, d, stack)
            if name == "hypot":
                return self._fact(2, a, d, stack) or self._fact(2, b, d, stack)
            if name == "+":
                return (
                    self._fact(0, a, d, stack) and self._fact(1, b, d, stack)
                ) or (self._fact(1, a, d, stack) and self._fact(0, b, d, stack))
            if name in ("*", "/"):
                return self._fact(0, a, d, stack) and self._fact(0, b, d, stack)
            if name == "pow":
                return self._fact(0, a, d, stack)
            return False
        if kind == 1:
            if self._node_fact(0, node, depth, stack):
                return True
            if name in ("fabs", "sqrt", "exp", "cosh", "hypot"):
                return True
            if name == "*":
                if self.core.find(a) == self.core.find(b):
                    return True
                return self._fact(1, a, d, stack) and self._fact(1, b, d, stack)
            if name in ("+", "/"):
                return self._fact(1, a, d, stack) and self._fact(1, b, d, stack)
            if name == "pow":
                return self._has_even_int_lit(self.core.find(b))
            return False
        if self._node_fact(0, node, depth, stack):
            return True
        if name == "neg":
            return self._fact(2, a, d, stack)
        if name == "fabs":
            return self._fact(2, a, d, stack)
        if name == "/":
            return self._fact(2, a, d, stack)
        if name == "*":
            return self._fact(2, a, d, stack) and self._fact(2, b, d, stack)
        return False

    def _guard(self, cond_id: int, env: tuple[int, ...]) -> bool:
        gen = self.core.generation()
        if gen != self._fact_gen:
            self._fact_memo.clear()
            self._fact_gen = gen
        for kind, vid in self._cond_table[cond_id]:
            if not self._fact(kind, env[vid], _FACT_DEPTH, set()):
                return False
        return True

    # -- saturation --

    def run(self) -> dict:
        self.stats = self.core.run(
            self._rules,
            self.limits.max_iters,
            self.limits.max_nodes,
            self._guard,
        )
        return self.stats

    # -- extraction --

    def _reps(self):
        return self.core.extract_reps(self._op_costs, LEAF_COST, budget=3)

    def _build_expr(self, reps, cid: int, ridx: int) -> Expr:
        cid = self.core.find(cid)
        _cost, node, sel = reps[cid][ridx]
        op, a, b, c = node
        if op == EG_VAR:
            return Var(self._vars[a])
        if op == EG_LIT:
            pay = self._lits[a]
            if pay[0] == "c":
                return Const(pay[1])  # type: ignore[arg-type]
            return Num(format_fraction(pay[1]))  # type: ignore[arg-type]
        args = []
        for slot, child in enumerate((a, b, c)):
            if child == -1:
                break
            args.append(self._build_expr(reps, child, sel[slot]))
        return App(self._ops[op - EG_FIRST_OP], tuple(args))

    def extract_top(self, cid: int, k: int) -> list[tuple[float, Expr]]:
        """Up to k cheapest distinct terms of the class, by ascending cost
        with per-class alternation through the top-3 representatives."""
        reps = self._reps()
        root = self.core.find(cid)
        found: dict[str, tuple[float, Expr]] = {}
        for node in self.core.class_nodes(root):
            op, a, b, c = node
            if op < EG_FIRST_OP:
                combos: list[tuple[float, tuple[int, int, int]]] = [
                    (LEAF_COST, (-1, -1, -1))
                ]
            else:
                combos = [(self._op_costs[op], (-1, -1, -1))]
                for slot, child in enumerate((a, b, c)):
                    if child == -1:
                        continue
                    crs = reps[self.core.find(child)]
                    if not crs:
                        combos = []
                        break
                    combos = [
                        (cost + ccost, sel[:slot] + (ri,) + sel[slot + 1 :])
                        for cost, sel in combos
                        for ri, (ccost, _n, _s) in enumerate(crs)
                    ]
            for cost, sel in combos:
                args = []
                for slot, child in enumerate((a, b, c)):
                    if child == -1:
                        break
                    args.append(self._build_expr(reps, child, sel[slot]))
                if op == EG_VAR:
                    e: Expr = Var(self._vars[a])
                elif op == EG_LIT:
                    pay = self._lits[a]
                    e = Const(pay[1]) if pay[0] == "c" else Num(format_fraction(pay[1]))  # type: ignore[arg-type]
                else:
                    e = App(self._ops[op - EG_FIRST_OP], tuple(args))
                text = print_expr(e)
                prev = found.get(text)
                if prev is None or cost < prev[0]:
                    found[text] = (cost, e)
        out = sorted(found.items(), key=lambda kv: (kv[1][0], kv[0]))
        return [(cost, e) for _text, (cost, e) in out[:k]]

    def extract_best(self, cid: int) -> tuple[float, Expr]:
        top = self.extract_top(cid, 1)
        if not top:
            raise PlatformError("class has no extractable term")
        return top[0]

    def node_ops(self) -> frozenset[str]:
        """Operator names present anywhere in the graph.  A rule whose lhs
        mentions an operator outside this set can never have matched."""
        out: set[str] = set()
        for cid in self.core.iter_classes():
            for op, _a, _b, _c in self.core.class_nodes(cid):
                if op >= EG_FIRST_OP:
                    out.add(self._ops[op - EG_FIRST_OP])
        return frozenset(out)

    def harvest(self, cap: int) -> list[Expr]:
        """Representative terms of every class, smallest trees first."""
        reps = self._reps()
        seen: set[str] = set()
        items: list[tuple[int, str, Expr]] = []
        for cid in self.core.iter_classes():
            for ridx in range(len(reps[cid])):
                e = self._build_expr(reps, cid, ridx)
                text = print_expr(e)
                if text not in seen:
                    seen.add(text)
                    items.append((expr_size(e), text, e))
        items.sort(key=lambda t: (t[0], t[1]))
        return [e for _sz, _t, e in items[:cap]]


# ---------------------------------------------------------------------------
# module-level operations

def saturate(
    e: Expr,
    rules: Sequence[Rule],
    lim: SearchLimits = DEFAULT_LIMITS,
    platform: Platform | None = None,
) -> EGraph:
    g = EGraph(platform, rules, lim)
    g.root = g.add(e)
    g.run()
    return g


def harvest_intermediates(g: EGraph, lim: SearchLimits = DEFAULT_LIMITS) -> list[Expr]:
    return g.harvest(lim.harvest_cap)


def prove_equivalent(
    a: Expr,
    b: Expr,
    rules: Sequence[Rule],
    lim: SearchLimits = DEFAULT_LIMITS,
    platform: Platform | None = None,
) -> bool:
    g = EGraph(platform, rules, lim)
    ca = g.add(a)
    cb = g.add(b)
    if ca == cb:
        return True
    g.run()
    return g.core.find(ca) == g.core.find(cb)


def pareto_frontier(
    measured: list[tuple[float, float, ErrorReport, Expr]]
) -> list[ParetoPoint]:
    """Non-dominated subset.  Candidates ordered by (cost asc, accuracy
    desc, printed form asc); a point survives iff it strictly improves
    accuracy over every cheaper survivor."""
    ordered = sorted(measured, key=lambda t: (t[0], -t[1], print_expr(t[3])))
    out: list[ParetoPoint] = []
    best = -1.0
    for cost, acc, rep, e in ordered:
        if acc > best:
            best = acc
            out.append(ParetoPoint(e, cost, acc, rep.mean_bits, rep.max_bits))
    return out


def optimize_with_graph(
    k: Kernel,
    p: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = DEFAULT_LIMITS,
    n_samples: int = 256,
    seed: int = 0,
) -> tuple[list[ParetoPoint], EGraph]:
    """optimize, but also hand back the saturated graph so callers can ask
    what the search actually touched.  Sampling runs first: an unsampleable
    kernel fails before any graph work."""
    global _OPTIMIZE_CALLS
    _OPTIMIZE_CALLS += 1
    sset = sample_with_reference(k, n_samples, seed, p)
    g = EGraph(p, rules, lim)
    root = g.add(k.body)
    g.run()
    cands = g.extract_top(root, lim.max_extracted)
    measured = []
    for cost, e in cands:
        rep = measure_on(sset, e, p)
        measured.append((cost, accuracy(rep), rep, e))
    return pareto_frontier(measured), g


def optimize(
    k: Kernel,
    p: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = DEFAULT_LIMITS,
    n_samples: int = 256,
    seed: int = 0,
) -> list[ParetoPoint]:
    """Saturate the kernel body, measure the cheapest extracted terms, and
    return the (cost, accuracy) Pareto frontier.  The frontier includes the
    minimum-cost and maximum-accuracy terms by construction.  Raises
    SamplingError when the kernel's domain yields too few valid points."""
    return optimize_with_graph(k, p, rules, lim, n_samples, seed)[0]


def best_accuracy(points: list[ParetoPoint]) -> float:
    return max((pt.accuracy for pt in points), default=0.0)


def acc_workload(
    kernels: Sequence[Kernel],
    p: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = DEFAULT_LIMITS,
    n_samples: int = 256,
    seed: int = 0,
) -> float:
    """Mean best accuracy over the workload, in [0, 1]."""
    if not kernels:
        return 0.0
    total = 0.0
    for k in kernels:
        total += best_accuracy(optimize(k, p, rules, lim, n_samples, seed))
    return total / len(kernels)
