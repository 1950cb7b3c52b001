"""Pool deduplication: collapse rewrite-equivalent candidate patterns.

Mining counts the same mathematical function many times under different
spellings: commuted arguments, renamed variables, factored or distributed
products.  This stage groups candidates that a saturation run proves equal
under some permutation of their variables, keeps one spelling per group,
and sums the occurrence counts so that ranking sees the pooled demand.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .expr import Expr, Var, expr_size, free_vars, print_expr, substitute, count_ops
from .generation import RawCandidate
from .platform import Platform, expr_cost
from .rules import Rule
from .superopt import EGraph, SearchLimits

MAX_DEDUP_VARS = 3

# Equivalence proofs are cheap and shallow; a candidate pool can be large,
# so each shared graph gets a tighter budget than a full optimization run.
DEDUP_LIMITS = SearchLimits(max_nodes=5_000, max_iters=6)

# Two patterns are only worth a joint proof attempt when their operator
# bags are close.  Distance = multiset symmetric difference, computed after
# expanding fused operators so that log1p(x) sits next to log(1+x).
MAX_OP_DISTANCE = 2

_FUSED_BAGS = {
    "log1p": ("log", "+"),
    "expm1": ("exp", "-"),
    "fma": ("*", "+"),
    "hypot": ("sqrt", "+", "*", "*"),
    "atanh": ("log", "/", "+", "-"),
}


def _op_bag(e: Expr) -> Counter:
    bag: Counter = Counter()
    for op, n in count_ops(e).items():
        for expanded in _FUSED_BAGS.get(op, (op,)):
            bag[expanded] += n
    return bag

# Keep each shared graph's pre-saturation size under a quarter of the node
# budget so the rules have room to fire.
_CHUNK_NODE_SHARE = 4

_MERGE_PASS_CAP = 5


@dataclass
class Candidate:
    """A deduplicated pattern class: one representative spelling plus the
    pooled evidence of every raw spelling that folded into it.  The ranking
    fields stay None until the selection stage fills them in."""

    pattern: Expr
    frequency: int
    source_kernels: set[str] = field(default_factory=set)
    size: float = 0.0
    urgency: Optional[float] = None
    score: Optional[float] = None
    uses: Optional[int] = None


def canonical_forms(e: Expr) -> set[Expr]:
    """Alpha-normalizations of e under every permutation of its variables.

    At most 3! = 6 forms.  More than three variables is a mining-stage bug
    and rejected outright.
    """
    vs = free_vars(e)
    if len(vs) > MAX_DEDUP_VARS:
        raise ValueError(f"pattern has {len(vs)} variables, limit is {MAX_DEDUP_VARS}")
    out: set[Expr] = set()
    for perm in itertools.permutations(range(1, len(vs) + 1)):
        out.add(substitute(e, {v: Var(f"t{j}") for v, j in zip(vs, perm)}))
    return out


def _op_distance(a: Counter, b: Counter) -> int:
    return sum(((a - b) + (b - a)).values())


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def _components(items: list[tuple[int, int, Counter]]) -> list[list[int]]:
    """Group pool indices whose op bags chain within MAX_OP_DISTANCE.
    items: (pool index, n_vars, op bag); only same-arity entries are passed."""
    uf = _UnionFind(len(items))
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if _op_distance(items[i][2], items[j][2]) <= MAX_OP_DISTANCE:
                uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i, (pi, _, _) in enumerate(items):
        groups.setdefault(uf.find(i), []).append(pi)
    return [groups[r] for r in sorted(groups)]


def _prove_batch(
    members: list[tuple[int, Expr]],
    platform: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits,
    uf: _UnionFind,
) -> None:
    """One shared e-graph over every canonical form of every member; after
    saturation, members whose form classes intersect are unioned."""
    g = EGraph(platform, rules, lim)
    roots: list[tuple[int, list[int]]] = []
    for pi, pat in members:
        forms = sorted(canonical_forms(pat), key=print_expr)
        roots.append((pi, [g.add(f) for f in forms]))
    g.run()
    owner: dict[int, int] = {}
    for pi, cids in roots:
        for cid in cids:
            rep = g.core.find(cid)
            if rep in owner:
                uf.union(owner[rep], pi)
            else:
                owner[rep] = pi


def dedup_pool(
    raw: Sequence[RawCandidate],
    platform: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = DEDUP_LIMITS,
) -> list[Candidate]:
    """Collapse a raw pool into equivalence classes; representatives only."""
    return [c for c, _members in dedup_classes(raw, platform, rules, lim)]


def dedup_classes(
    raw: Sequence[RawCandidate],
    platform: Platform,
    rules: Sequence[Rule],
    lim: SearchLimits = DEDUP_LIMITS,
) -> list[tuple[Candidate, list[RawCandidate]]]:
    """Collapse a raw pool into equivalence classes.

    Patterns are bucketed by variable count and chained into components by
    operator-bag distance; each component saturates in one shared e-graph
    (chunked when large) and members whose canonical forms meet are merged.
    Merging repeats on the representatives until no pass finds a new union,
    which makes the whole pass idempotent.  Frequencies and source sets are
    summed over each class; the representative is the cheapest spelling.

    Cross-arity equivalences (log(1+t1) vs log(1+t1*t2)) are out of scope
    by construction: different variable counts never share a bucket.
    """
    # Fold exact duplicates first so the pool order cannot matter.
    by_text: dict[str, RawCandidate] = {}
    for r in raw:
        text = print_expr(r.pattern)
        prev = by_text.get(text)
        if prev is None:
            by_text[text] = RawCandidate(r.pattern, r.occurrences, set(r.source_kernels))
        else:
            prev.occurrences += r.occurrences
            prev.source_kernels |= r.source_kernels
    pool = [by_text[t] for t in sorted(by_text)]

    uf = _UnionFind(len(pool))
    nvars = [len(free_vars(r.pattern)) for r in pool]
    bags = [_op_bag(r.pattern) for r in pool]
    budget = max(64, lim.max_nodes // _CHUNK_NODE_SHARE)

    for _ in range(_MERGE_PASS_CAP):
        # One entrant per current class, so later passes retry merges that
        # a chunk boundary split apart.
        entrants = sorted({uf.find(i) for i in range(len(pool))})
        by_arity: dict[int, list[tuple[int, int, Counter]]] = {}
        for pi in entrants:
            by_arity.setdefault(nvars[pi], []).append((pi, nvars[pi], bags[pi]))
        merged = False
        for arity in sorted(by_arity):
            for comp in _components(by_arity[arity]):
                if len(comp) < 2:
                    continue
                chunk: list[tuple[int, Expr]] = []
                used = 0
                before = list(uf.parent)
                for pi in comp:
                    pat = pool[pi].pattern
                    weight = expr_size(pat) * max(1, len(canonical_forms(pat)))
                    if chunk and used + weight > budget:
                        _prove_batch(chunk, platform, rules, lim, uf)
                        chunk, used = [], 0
                    chunk.append((pi, pat))
                    used += weight
                if len(chunk) >= 2:
                    _prove_batch(chunk, platform, rules, lim, uf)
                if uf.parent != before:
                    merged = True
        if not merged:
            break

    classes: dict[int, list[int]] = {}
    for i in range(len(pool)):
        classes.setdefault(uf.find(i), []).append(i)

    out: list[tuple[Candidate, list[RawCandidate]]] = []
    for root in sorted(classes):
        members = classes[root]
        rep = min(
            members,
            key=lambda i: (
                expr_cost(platform, pool[i].pattern),
                len(print_expr(pool[i].pattern)),
                print_expr(pool[i].pattern),
            ),
        )
        pat = pool[rep].pattern
        cand = Candidate(
            pattern=pat,
            frequency=sum(pool[i].occurrences for i in members),
            source_kernels=set().union(*(pool[i].source_kernels for i in members)),
            size=expr_cost(platform, pat),
        )
        out.append(
            (cand, sorted((pool[i] for i in members), key=lambda r: print_expr(r.pattern)))
        )
    out.sort(key=lambda cm: (-cm[0].frequency, cm[0].size, print_expr(cm[0].pattern)))
    return out
