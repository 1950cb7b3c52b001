"""Compiled core vs pure-Python fallback: identical e-graphs, matching tapes.

Both backends run the same scripted workload in subprocesses (backend choice
is frozen at import, so separate interpreters are the only clean way to get
one of each).  E-graph behaviour must match exactly; tape evaluation must
match bit for bit on IEEE-exact operators and within 2 ulp on libm calls.
"""

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from libminer import core

SCENARIO = Path(__file__).with_name("parity_scenario.py")


def _run(pure: bool) -> dict:
    env = dict(os.environ)
    env.pop("LIBMINER_PURE", None)
    if pure:
        env["LIBMINER_PURE"] = "1"
    out = subprocess.run(
        [sys.executable, str(SCENARIO)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
        timeout=300,
    )
    return json.loads(out.stdout)


@pytest.fixture(scope="module")
def docs():
    compiled = _run(pure=False)
    if compiled["backend"] != "compiled":
        pytest.skip("compiled core unavailable; nothing to cross-check")
    return compiled, _run(pure=True)


def test_backends_differ_only_by_name(docs):
    compiled, pure = docs
    assert compiled["backend"] == "compiled"
    assert pure["backend"] == "python"


def test_exact_tapes_bit_identical(docs):
    compiled, pure = docs
    for tc, tp in zip(compiled["tapes"], pure["tapes"]):
        if tc["kind"] != "exact":
            continue
        assert tc["ordinals"] == tp["ordinals"], tc["expr"]


def test_libm_tapes_within_two_ulp(docs):
    compiled, pure = docs
    for tc, tp in zip(compiled["tapes"], pure["tapes"]):
        if tc["kind"] != "libm":
            continue
        worst = max(
            abs(a - b) for a, b in zip(tc["ordinals"], tp["ordinals"])
        )
        assert worst <= 2, (tc["expr"], worst)


def test_egraph_runs_identical(docs):
    compiled, pure = docs
    assert compiled["egraph"] == pure["egraph"]


def test_inprocess_backend_reports_itself():
    # whatever pytest imported must agree with its own flag
    assert core.BACKEND_NAME == ("compiled" if core.COMPILED else "python")
