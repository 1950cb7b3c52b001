"""Command line surface: learn a library from a corpus, print one kernel's
frontier, or inspect one mined candidate.

Progress goes to stderr; artifacts go to files under --out.  Exit codes:
0 success, 2 bad configuration, 3 bad corpus, 4 pipeline failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .dedup import Candidate, canonical_forms, dedup_classes
from .expr import (
    Kernel,
    ParseError,
    alpha_normalize,
    free_vars,
    parse_expr,
    parse_fpcore,
    print_expr,
)
from .generation import dump_pool, generate
from .numerics import SamplingError
from .platform import (
    Platform,
    PlatformError,
    default_platform,
    expr_cost,
    extend_all,
    parse_platform,
    print_platform,
)
from .report import report_json, report_markdown
from .rules import Rule, RuleError, default_rules, definition_rules, expansion_rules, parse_rules
from .selection import (
    SELECT_LIMITS,
    SelectionConfig,
    final_pass,
    run_selection,
    urgency,
)
from .superopt import DEFAULT_LIMITS, SearchLimits, optimize, reset_optimize_calls

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORPUS = 3
EXIT_PIPELINE = 4


class ConfigError(ValueError):
    pass


class CorpusError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus_path: str
    out_dir: str = "out"
    platform_path: Optional[str] = None
    rules_path: Optional[str] = None
    seed: int = 0
    n_samples: int = 256
    limits: SearchLimits = DEFAULT_LIMITS
    selection: SelectionConfig = SelectionConfig()
    jobs: int = 1


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_platform(cfg: RunConfig) -> Platform:
    if cfg.platform_path is None:
        return default_platform()
    try:
        text = Path(cfg.platform_path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read platform file: {e}")
    try:
        return parse_platform(text)
    except (ParseError, PlatformError) as e:
        raise ConfigError(f"bad platform file {cfg.platform_path}: {e}")


def _load_rules(cfg: RunConfig) -> list[Rule]:
    if cfg.rules_path is None:
        return default_rules()
    try:
        text = Path(cfg.rules_path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read rules file: {e}")
    try:
        return parse_rules(text)
    except (ParseError, RuleError) as e:
        raise ConfigError(f"bad rules file {cfg.rules_path}: {e}")


def _load_corpus(cfg: RunConfig, platform: Platform) -> list[Kernel]:
    try:
        text = Path(cfg.corpus_path).read_text()
    except OSError as e:
        raise CorpusError(f"cannot read corpus: {e}")
    try:
        kernels = parse_fpcore(text, platform.op_table())
    except ParseError as e:
        raise CorpusError(f"bad corpus {cfg.corpus_path}: {e}")
    if not kernels:
        raise CorpusError(f"no kernels in {cfg.corpus_path}")
    names = [k.name for k in kernels]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise CorpusError(f"duplicate kernel names: {', '.join(dup)}")
    return kernels


def cmd_learn(cfg: RunConfig) -> int:
    base = _load_platform(cfg)
    rules = _load_rules(cfg)
    kernels = _load_corpus(cfg, base)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reset_optimize_calls()
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    _say(f"learn: {len(kernels)} kernels from {cfg.corpus_path}")
    stats: dict = {}
    raw = generate(
        kernels, base, rules, lim=cfg.limits, seed=cfg.seed, jobs=cfg.jobs, stats=stats
    )
    t1 = time.perf_counter()
    timings["initial superoptimization"] = t1 - t0
    _say(f"learn: mined {len(raw)} raw patterns ({stats.get('cut_cap_hits', 0)} cut-cap hits)")

    (out / "candidates.txt").write_text(dump_pool(raw))
    t2 = time.perf_counter()
    timings["candidate dump"] = t2 - t1

    classes = dedup_classes(raw, base, rules)
    pool = [c for c, _m in classes]
    t3 = time.perf_counter()
    timings["deduplication"] = t3 - t2
    _say(f"learn: {len(pool)} candidate classes after deduplication")

    state = run_selection(pool, kernels, base, rules, cfg.selection, _say, timings)
    rep_t0 = time.perf_counter()
    rep = final_pass(state, kernels, base, rules, cfg.selection, _say)
    timings["final superoptimization"] = time.perf_counter() - rep_t0

    (out / "report.json").write_text(report_json(rep))
    (out / "report.md").write_text(report_markdown(rep))
    proposed = extend_all(base, [c.pattern for c in rep.proposed])
    (out / "proposed_platform.txt").write_text(print_platform(proposed))
    (out / "timings.json").write_text(
        json.dumps({k: round(v, 3) for k, v in timings.items()}, indent=2, sort_keys=True)
        + "\n"
    )
    _say(
        f"learn: proposed {len(rep.proposed)} primitive(s); "
        f"artifacts in {out}/ (report.json, report.md, proposed_platform.txt, timings.json)"
    )
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, kernel_name: str) -> int:
    plat = _load_platform(cfg)
    rules = _load_rules(cfg)
    kernels = _load_corpus(cfg, plat)
    by_name = {k.name: k for k in kernels}
    if kernel_name not in by_name:
        raise ConfigError(
            f"unknown kernel {kernel_name!r}; corpus has: {', '.join(sorted(by_name))}"
        )
    k = by_name[kernel_name]
    rr = list(rules) + definition_rules(plat) + expansion_rules()
    _say(f"optimize: {print_expr(k.body)}")
    pts = optimize(k, plat, rr, cfg.limits, cfg.n_samples, cfg.seed)
    print(f"{'cost':>10}  {'accuracy':>8}  {'mean_bits':>9}  expression")
    for p in pts:
        print(f"{p.cost:10.2f}  {p.accuracy:8.4f}  {p.mean_bits:9.2f}  {print_expr(p.expr)}")
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, pattern_text: str) -> int:
    base = _load_platform(cfg)
    rules = _load_rules(cfg)
    kernels = _load_corpus(cfg, base)
    try:
        pat = parse_expr(pattern_text, base.op_table())
    except ParseError as e:
        raise ConfigError(f"bad pattern: {e}")
    if not free_vars(pat):
        raise ConfigError("closed pattern: no variables")
    norm, _ = alpha_normalize(pat)
    qtext = print_expr(norm)

    _say("inspect: mining the corpus (this runs the full generation stage)")
    raw = generate(kernels, base, rules, lim=cfg.limits, seed=cfg.seed, jobs=cfg.jobs)
    classes = dedup_classes(raw, base, rules)
    hit = None
    for cand, members in classes:
        if any(print_expr(m.pattern) == qtext for m in members):
            hit = (cand, members)
            break
    if hit is None:
        raise ConfigError(f"pattern {qtext} not in the mined pool")
    cand, members = hit
    print(f"pattern:    {qtext}")
    print(f"class rep:  {print_expr(cand.pattern)}")
    print(f"size:       {expr_cost(base, pat):.2f}")
    print(f"frequency:  {cand.frequency} (class total)")
    u = urgency(
        Candidate(pattern=cand.pattern, frequency=cand.frequency, size=cand.size),
        [],
        base,
        rules,
        SELECT_LIMITS,
        cfg.n_samples,
        cfg.seed,
    )
    print(f"urgency:    {u:.4f}")
    print("canonical forms:")
    for f in sorted(canonical_forms(pat), key=print_expr):
        print(f"  {print_expr(f)}")
    print("dedup class members:")
    for m in members:
        print(f"  {m.occurrences:6d}  {print_expr(m.pattern)}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="libminer",
        description="Mine a numerical-kernel corpus for library primitives worth expert attention.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--corpus", required=True, help="FPCore corpus file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--samples", type=int, default=256, help="measurement points per kernel")
    common.add_argument("--max-nodes", type=int, default=DEFAULT_LIMITS.max_nodes)
    common.add_argument("--max-iters", type=int, default=DEFAULT_LIMITS.max_iters)
    common.add_argument("--platform", default=None, help="platform file (default: builtin)")
    common.add_argument("--rules", default=None, help="rewrite rules file (default: builtin)")
    common.add_argument(
        "--jobs",
        type=int,
        default=max(1, os.cpu_count() or 1),
        help="concurrent worker processes (default: hardware parallelism)",
    )

    learn = sub.add_parser("learn", parents=[common], help="run the full pipeline")
    learn.add_argument("--t1", type=int, default=625, help="stage-1 slice measured for urgency")
    learn.add_argument("--t2", type=int, default=25, help="stage-2 batch size")
    learn.add_argument("--target-size", type=int, default=10)
    learn.add_argument("--min-uses", type=int, default=1)

    opt = sub.add_parser("optimize", parents=[common], help="print one kernel's frontier")
    opt.add_argument("kernel", help="kernel name from the corpus")

    ins = sub.add_parser("inspect", parents=[common], help="inspect one mined candidate")
    ins.add_argument("pattern", help="candidate pattern, e.g. '(log (+ 1 t1))'")
    return ap


def _config_from(ns: argparse.Namespace) -> RunConfig:
    if ns.samples < 8:
        raise ConfigError("--samples must be at least 8")
    if ns.max_nodes < 64 or ns.max_iters < 1:
        raise ConfigError("--max-nodes/--max-iters too small to search")
    if ns.jobs < 1:
        raise ConfigError("--jobs must be positive")
    limits = SearchLimits(
        max_nodes=ns.max_nodes,
        max_iters=ns.max_iters,
        max_extracted=DEFAULT_LIMITS.max_extracted,
        harvest_cap=DEFAULT_LIMITS.harvest_cap,
    )
    # probe searches stay capped, but never above the user's ceiling
    probe = SearchLimits(
        max_nodes=min(SELECT_LIMITS.max_nodes, limits.max_nodes),
        max_iters=min(SELECT_LIMITS.max_iters, limits.max_iters),
        max_extracted=limits.max_extracted,
        harvest_cap=limits.harvest_cap,
    )
    try:
        selection = SelectionConfig(
            t1=getattr(ns, "t1", 625),
            t2=getattr(ns, "t2", 25),
            target_size=getattr(ns, "target_size", 10),
            min_uses=getattr(ns, "min_uses", 1),
            n_samples=ns.samples,
            seed=ns.seed,
            jobs=ns.jobs,
            search_limits=probe,
            final_limits=limits,
        )
    except ValueError as e:
        raise ConfigError(str(e))
    return RunConfig(
        corpus_path=ns.corpus,
        out_dir=ns.out,
        platform_path=ns.platform,
        rules_path=ns.rules,
        seed=ns.seed,
        n_samples=ns.samples,
        limits=limits,
        selection=selection,
        jobs=ns.jobs,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _build_parser()
    ns = ap.parse_args(argv)
    try:
        cfg = _config_from(ns)
        if ns.command == "learn":
            return cmd_learn(cfg)
        if ns.command == "optimize":
            return cmd_optimize(cfg, ns.kernel)
        return cmd_inspect(cfg, ns.pattern)
    except ConfigError as e:
        _say(f"config error: {e}")
        return EXIT_CONFIG
    except CorpusError as e:
        _say(f"corpus error: {e}")
        return EXIT_CORPUS
    except (SamplingError, PlatformError, RuleError, ParseError, ValueError) as e:
        _say(f"pipeline failure: {e}")
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
