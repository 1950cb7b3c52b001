"""Deterministic workload whose output fingerprints the active core backend.

Run as a script; prints a JSON document.  The cross-check test runs it once
per backend and diffs the documents.
"""

import json
import sys

import numpy as np

from libminer import core
from libminer.expr import parse_expr, print_expr
from libminer.numerics import compile_tape, eval_f64_batch, ordinal
from libminer.platform import default_platform
from libminer.rules import default_rules
from libminer.superopt import SearchLimits, harvest_intermediates, saturate

TAPE_EXPRS = [
    # exact under IEEE: must agree bit for bit across backends
    ("exact", "(+ (* a b) c)"),
    ("exact", "(fma a b c)"),
    ("exact", "(/ (- a c) b)"),
    ("exact", "(sqrt (fabs a))"),
    ("exact", "(neg (- a (* b b)))"),
    # libm-backed: numpy and C libm may differ by a couple of ulps
    ("libm", "(log (/ (+ 1 a) (- 1 a)))"),
    ("libm", "(atan2 a b)"),
    ("libm", "(* (exp c) (sin b))"),
    ("libm", "(pow (fabs b) a)"),
]

SAT_EXPRS = [
    "(log (/ (+ 1 x) (- 1 x)))",
    "(- (* x x) (* y y))",
    "(/ (- (sqrt (+ x 1)) (sqrt x)) 1)",
]


def main() -> None:
    plat = default_platform()
    table = plat.op_table()
    rules = default_rules()

    rng = np.random.Generator(np.random.PCG64(20_240_817))
    xs = rng.uniform(-0.9, 0.9, size=(64, 3))
    xs[0] = [0.5, -0.25, 0.125]  # one fully representable row

    doc = {"backend": core.BACKEND_NAME, "tapes": [], "egraph": []}
    for kind, src in TAPE_EXPRS:
        tape = compile_tape(parse_expr(src, table), ["a", "b", "c"], plat)
        out = eval_f64_batch(tape, xs)
        doc["tapes"].append(
            {"kind": kind, "expr": src, "ordinals": [ordinal(float(v)) for v in out]}
        )

    lim = SearchLimits(max_nodes=4_000, max_iters=6, max_extracted=10)
    for src in SAT_EXPRS:
        g = saturate(parse_expr(src, table), rules, lim, plat)
        top = g.extract_top(g.root, 10)
        doc["egraph"].append(
            {
                "expr": src,
                "stats": g.stats,
                "top": [[c, print_expr(e)] for c, e in top],
                "harvest": [print_expr(e) for e in harvest_intermediates(g, lim)[:40]],
            }
        )

    json.dump(doc, sys.stdout, sort_keys=True)


if __name__ == "__main__":
    main()
