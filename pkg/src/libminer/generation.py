"""Candidate mining: turn superoptimizer intermediates into cut patterns.

Every term the search explored is broken into its subexpressions, and each
subexpression is generalized by cutting operator subtrees out and replacing
them with fresh variables.  The surviving patterns, with occurrence counts
and source kernels, form the raw candidate pool for deduplication.
"""
from __future__ import annotations

from dataclasses import dataclass

from .expr import (
    App,
    Expr,
    Kernel,
    Var,
    alpha_normalize,
    expr_size,
    free_vars,
    print_expr,
    subexpr_multiplicity,
)
from .platform import Platform
from .rules import Rule
from .superopt import DEFAULT_LIMITS, SearchLimits, harvest_intermediates, saturate
from .util import parallel_map

MAX_PATTERN_VARS = 3
# cutting enumerates subsets of cut sites, so cap the site count; 2**9 = 512
# patterns per term is ample and blowup past it is rare
MAX_CUT_SITES = 9


@dataclass
class RawCandidate:
    """A mined pattern over canonical variables t1..tk."""

    pattern: Expr
    occurrences: int
    source_kernels: set[str]


def cut_sites(e: Expr) -> list[tuple[tuple[int, ...], Expr]]:
    """Cuttable positions of e: subtrees headed by a binary-or-wider
    operator, strictly below the root, in pre-order."""
    sites: list[tuple[tuple[int, ...], Expr]] = []

    def walk(x: Expr, path: tuple[int, ...]) -> None:
        if not isinstance(x, App):
            return
        if path and len(x.args) >= 2:
            sites.append((path, x))
        for i, a in enumerate(x.args):
            walk(a, path + (i,))

    walk(e, ())
    return sites


def _apply_cut(e: Expr, chosen: set[tuple[int, ...]]) -> Expr:
    # fresh names use a non-identifier prefix so they cannot collide with
    # parsed variables; alpha_normalize renames them away immediately
    counter = [0]

    def rebuild(x: Expr, path: tuple[int, ...]) -> Expr:
        if path in chosen:
            counter[0] += 1
            return Var(f"\x01cut{counter[0]}")
        if isinstance(x, App):
            return App(x.op, tuple(rebuild(a, path + (i,)) for i, a in enumerate(x.args)))
        return x

    return rebuild(e, ())


def cut_expr(e: Expr) -> set[Expr]:
    """All generalizations of e reachable by cutting subtree subsets.

    Each returned pattern is alpha-normalized to t1..tk and carries 1 to
    3 variables; the uncut term itself is included when it qualifies.
    Sites past MAX_CUT_SITES are dropped largest-subtree-first.
    """
    if not isinstance(e, App):
        raise ValueError("cut_expr needs an operator-headed term")
    sites = cut_sites(e)
    if len(sites) > MAX_CUT_SITES:
        order = sorted(range(len(sites)), key=lambda i: (-expr_size(sites[i][1]), i))
        keep = sorted(order[:MAX_CUT_SITES])
        sites = [sites[i] for i in keep]
    out: dict[str, Expr] = {}
    for mask in range(1 << len(sites)):
        chosen = {sites[i][0] for i in range(len(sites)) if mask >> i & 1}
        pat, _ = alpha_normalize(_apply_cut(e, chosen))
        if 1 <= len(free_vars(pat)) <= MAX_PATTERN_VARS:
            out.setdefault(print_expr(pat), pat)
    return set(out.values())


def _is_existing_primitive(pat: Expr, platform: Platform) -> bool:
    # one platform op applied to distinct bare variables is already callable
    if not isinstance(pat, App):
        return False
    if not all(isinstance(a, Var) for a in pat.args):
        return False
    names = [a.name for a in pat.args]
    return len(set(names)) == len(names)


def _kernel_pool(task: tuple) -> tuple[str, dict[str, tuple[Expr, int]], int]:
    kernel, platform, rules, lim = task
    g = saturate(kernel.body, rules, lim, platform)
    counts: dict[str, list] = {}
    cap_hits = 0
    for term in harvest_intermediates(g, lim):
        for sub, mult in subexpr_multiplicity(term).items():
            if len(cut_sites(sub)) > MAX_CUT_SITES:
                cap_hits += 1
            for pat in sorted(cut_expr(sub), key=print_expr):
                ent = counts.setdefault(print_expr(pat), [pat, 0])
                ent[1] += mult
    return kernel.name, {t: (p, n) for t, (p, n) in counts.items()}, cap_hits


def generate(
    ks: list[Kernel],
    platform: Platform,
    rules: tuple[Rule, ...],
    lim: SearchLimits = DEFAULT_LIMITS,
    seed: int = 0,
    jobs: int = 1,
    stats: dict | None = None,
) -> list[RawCandidate]:
    """Mine the raw candidate pool from every kernel's explored terms.

    Occurrences count structural positions: a pattern appearing twice in
    one harvested term counts twice.  `seed` is accepted for interface
    symmetry; mining itself is deterministic.
    """
    del seed
    if not ks:
        raise ValueError("empty corpus")
    tasks = [(k, platform, rules, lim) for k in ks]
    results = parallel_map(_kernel_pool, tasks, jobs)
    merged: dict[str, RawCandidate] = {}
    cap_total = 0
    for kname, counts, cap_hits in results:
        cap_total += cap_hits
        for text, (pat, occ) in counts.items():
            got = merged.get(text)
            if got is None:
                merged[text] = RawCandidate(pat, occ, {kname})
            else:
                got.occurrences += occ
                got.source_kernels.add(kname)
    pool = [c for c in merged.values() if not _is_existing_primitive(c.pattern, platform)]
    pool.sort(key=lambda c: (-c.occurrences, expr_size(c.pattern), print_expr(c.pattern)))
    if stats is not None:
        stats["cut_cap_hits"] = cap_total
        stats["raw_patterns"] = len(pool)
    return pool


def dump_pool(pool: list[RawCandidate]) -> str:
    """Line-delimited record per candidate, for inspection between stages."""
    lines = []
    for c in pool:
        ks = " ".join(sorted(c.source_kernels))
        lines.append(f"(candidate {print_expr(c.pattern)} {c.occurrences} ({ks}))")
    return "\n".join(lines) + "\n"
