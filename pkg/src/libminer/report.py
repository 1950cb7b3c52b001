"""Evidence report rendering: JSON for machines, markdown for people.

The JSON form is deterministic for a fixed config and seed: keys are
sorted, floats rely on repr round-tripping, and wall-clock timings live in
a separate file so rerunning a pipeline reproduces report.json byte for
byte.
"""
from __future__ import annotations

import json
from typing import Optional

from .expr import print_expr
from .platform import candidate_op_name
from .selection import FinalReport, KernelReport, SelectionConfig, budget_bound
from .superopt import ParetoPoint


def _point(p: ParetoPoint) -> dict:
    return {
        "expr": print_expr(p.expr),
        "cost": p.cost,
        "accuracy": p.accuracy,
        "mean_bits": p.mean_bits,
        "max_bits": p.max_bits,
    }


def _limits(lim) -> dict:
    return {
        "max_nodes": lim.max_nodes,
        "max_iters": lim.max_iters,
        "max_extracted": lim.max_extracted,
        "harvest_cap": lim.harvest_cap,
    }


def _config(cfg: SelectionConfig) -> dict:
    return {
        "t1": cfg.t1,
        "t2": cfg.t2,
        "implication_threshold": cfg.implication_threshold,
        "target_size": cfg.target_size,
        "min_uses": cfg.min_uses,
        "expected_alpha": cfg.expected_alpha,
        "n_samples": cfg.n_samples,
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "search_limits": _limits(cfg.search_limits),
        "final_limits": _limits(cfg.final_limits),
    }


def _kernel(k: KernelReport) -> dict:
    return {
        "name": k.name,
        "frontier_base": [_point(p) for p in k.frontier_base],
        "frontier_extended": [_point(p) for p in k.frontier_ext],
        "min_bits_base": k.min_bits_base,
        "min_bits_extended": k.min_bits_ext,
        "cost_at_accuracy": k.cost_at_accuracy,
    }


def report_dict(rep: FinalReport) -> dict:
    proposed = {print_expr(c.pattern) for c in rep.proposed}
    return {
        "config": _config(rep.config),
        "candidates": [
            {
                "pattern": print_expr(c.pattern),
                "operator": candidate_op_name(c.pattern),
                "frequency": c.frequency,
                "size": c.size,
                "urgency": c.urgency,
                "score": c.score,
                "uses": c.uses,
                "source_kernels": sorted(c.source_kernels),
                "proposed": print_expr(c.pattern) in proposed,
            }
            for c in rep.selected
        ],
        "kernels": [_kernel(k) for k in rep.kernels],
        "rounds": [
            {
                "number": r.number,
                "ranked": r.ranked,
                "batch": r.batch,
                "edges": [list(e) for e in r.edges],
                "chosen": r.chosen,
                "flagged": r.flagged,
                "workload_accuracy": r.workload_accuracy,
            }
            for r in rep.state.rounds
        ],
        "workload_accuracy_history": rep.state.workload_acc_history,
        "optimize_calls": rep.optimize_calls,
        "budget_bound": budget_bound(
            len(rep.kernels), len(rep.state.rounds), rep.config
        ),
    }


def report_json(rep: FinalReport) -> str:
    return json.dumps(report_dict(rep), indent=2, sort_keys=True) + "\n"


def _fmt(x: Optional[float], nd: int = 3) -> str:
    return "-" if x is None else f"{x:.{nd}f}"


def report_markdown(rep: FinalReport) -> str:
    lines = ["# Library learning report", ""]
    hist = rep.state.workload_acc_history
    if hist:
        lines.append(
            f"Workload accuracy went from {hist[0]:.4f} to {hist[-1]:.4f} "
            f"over {len(rep.state.rounds)} selection round(s); "
            f"{rep.optimize_calls} optimization calls."
        )
        lines.append("")

    lines += ["## Proposed primitives", ""]
    if rep.proposed:
        lines += [
            "| operator | pattern | frequency | urgency | score | uses |",
            "|---|---|---|---|---|---|",
        ]
        for c in rep.proposed:
            lines.append(
                f"| {candidate_op_name(c.pattern)} | `{print_expr(c.pattern)}` "
                f"| {c.frequency} | {_fmt(c.urgency)} | {_fmt(c.score, 4)} "
                f"| {c.uses} |"
            )
    else:
        lines.append("No candidate cleared the use threshold.")
    dropped = [c for c in rep.selected if c not in rep.proposed]
    if dropped:
        lines += ["", "Selected but dropped for lack of uses:", ""]
        for c in dropped:
            lines.append(f"- `{print_expr(c.pattern)}` (uses={c.uses})")

    lines += ["", "## Per-kernel frontiers", ""]
    lines += [
        "| kernel | best bits (base) | best bits (extended) "
        "| cost@0.95 (base) | cost@0.95 (extended) |",
        "|---|---|---|---|---|",
    ]
    for k in rep.kernels:
        at95 = k.cost_at_accuracy.get("0.95", {})
        lines.append(
            f"| {k.name} | {k.min_bits_base:.2f} | {k.min_bits_ext:.2f} "
            f"| {_fmt(at95.get('base'), 1)} | {_fmt(at95.get('extended'), 1)} |"
        )

    lines += ["", "## Rounds", ""]
    for r in rep.state.rounds:
        lines.append(
            f"- round {r.number}: ranked {r.ranked}, batch {len(r.batch)}, "
            f"{len(r.edges)} implication edge(s), chose "
            f"{', '.join(f'`{t}`' for t in r.chosen)}; "
            f"workload accuracy {r.workload_accuracy:.4f}"
        )
    return "\n".join(lines) + "\n"
