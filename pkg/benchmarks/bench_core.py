"""Compare the compiled core against the pure-Python fallback.

Times the two hot paths behind every pipeline stage: tape evaluation
(error measurement) and equality saturation (rewriting).  Run with --both
to re-exec under LIBMINER_PURE=1 and print a side-by-side table:

    python benchmarks/bench_core.py --both
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from libminer import core
from libminer.expr import parse_expr
from libminer.numerics import compile_tape, eval_f64_batch
from libminer.platform import default_platform
from libminer.rules import default_rules
from libminer.superopt import SearchLimits, saturate

TAPE_EXPRS = [
    "(+ (* a b) c)",
    "(fma a b c)",
    "(log (/ (+ 1 a) (- 1 a)))",
    "(* (exp c) (sin b))",
    "(sqrt (+ (* a a) (* b b)))",
]

SAT_EXPRS = [
    "(log (/ (+ 1 x) (- 1 x)))",
    "(- (* x x) (* y y))",
    "(+ (sqrt (+ x 1)) (* y (- (exp x) 1)))",
]

SAT_LIMITS = SearchLimits(max_nodes=8_000, max_iters=8)


def bench_tapes(n_points: int, repeat: int) -> float:
    plat = default_platform()
    table = plat.op_table()
    rng = np.random.Generator(np.random.PCG64(7))
    xs = rng.uniform(-0.9, 0.9, size=(n_points, 3))
    tapes = [compile_tape(parse_expr(s, table), ["a", "b", "c"], plat) for s in TAPE_EXPRS]
    # warm up once so allocation noise stays out of the timed loop
    for t in tapes:
        eval_f64_batch(t, xs)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for t in tapes:
            eval_f64_batch(t, xs)
        best = min(best, time.perf_counter() - t0)
    return len(TAPE_EXPRS) * n_points / best


def bench_saturation(repeat: int) -> float:
    plat = default_platform()
    table = plat.op_table()
    rules = default_rules()
    exprs = [parse_expr(s, table) for s in SAT_EXPRS]
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for e in exprs:
            saturate(e, rules, SAT_LIMITS, plat)
        best = min(best, time.perf_counter() - t0)
    return len(SAT_EXPRS) / best


def run(n_points: int, repeat: int) -> dict:
    return {
        "backend": core.BACKEND_NAME,
        "tape_evals_per_s": bench_tapes(n_points, repeat),
        "saturations_per_s": bench_saturation(repeat),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--both", action="store_true", help="also time the pure-Python fallback")
    ap.add_argument("--json", action="store_true", help="print one JSON object and exit")
    args = ap.parse_args()

    mine = run(args.points, args.repeat)
    if args.json:
        json.dump(mine, sys.stdout)
        print()
        return

    rows = [mine]
    if args.both:
        if not core.COMPILED:
            print("note: compiled backend unavailable; timing the fallback twice")
        env = dict(os.environ, LIBMINER_PURE="1")
        out = subprocess.run(
            [
                sys.executable,
                os.path.abspath(__file__),
                "--points",
                str(args.points),
                "--repeat",
                str(args.repeat),
                "--json",
            ],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        rows.append(json.loads(out.stdout))

    print(f"{'backend':>10}  {'tape evals/s':>14}  {'saturations/s':>14}")
    for r in rows:
        print(
            f"{r['backend']:>10}  {r['tape_evals_per_s']:14.0f}  "
            f"{r['saturations_per_s']:14.2f}"
        )
    if len(rows) == 2 and rows[1]["tape_evals_per_s"] > 0:
        print(
            f"{'speedup':>10}  "
            f"{rows[0]['tape_evals_per_s'] / rows[1]['tape_evals_per_s']:13.1f}x  "
            f"{rows[0]['saturations_per_s'] / rows[1]['saturations_per_s']:13.1f}x"
        )


if __name__ == "__main__":
    main()
