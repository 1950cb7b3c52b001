"""Error measurement against an escalating-precision reference.

Accuracy is measured in bits of error: the log2 of one plus the ordinal
distance between a computed binary64 value and the correctly rounded true
value, capped at 64.  True values come from MPFR evaluation whose precision
escalates until the rounded binary64 image is stable across two rungs.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import core
from .coredefs import T_EXT, T_LOADC, T_LOADV, TAPE_OPCODE
from .expr import (
    App,
    Const,
    Expr,
    Kernel,
    Num,
    Var,
    num_fraction,
    print_expr,
    print_kernel,
)
from .platform import DEFINED, Platform, PlatformError
from .refeval import (
    PRECISIONS,
    REF_NON_CONVERGED,
    REF_OK,
    REF_UNDEFINED,
    RefResult,
    eval_reference,
)
from .util import stable_seed

__all__ = [
    "PRECISIONS", "REF_NON_CONVERGED", "REF_OK", "REF_UNDEFINED", "RefResult",
    "eval_reference", "ordinal", "from_ordinal", "bits_error", "bits_error_vec",
    "SamplePoint", "SampleSet", "SamplingError", "sample_points",
    "sample_with_reference", "Tape", "compile_tape", "eval_f64",
    "eval_f64_batch", "ErrorReport", "measure_error", "measure_on", "accuracy",
    "MAX_BITS",
]

MAX_BITS = 64.0
F64_MAX = np.finfo(np.float64).max


class SamplingError(RuntimeError):
    """Raised when the resample budget cannot produce enough valid points."""


# ---------------------------------------------------------------------------
# binary64 ordinals

def ordinal(x: float) -> int:
    """Sign-folded monotone integer encoding of a binary64 value.
    Adjacent floats are adjacent ordinals; +0 and -0 share ordinal 0."""
    (i,) = struct.unpack("<q", struct.pack("<d", x))
    return i if i >= 0 else -(2**63) - i


def from_ordinal(o: int) -> float:
    i = o if o >= 0 else -(2**63) - o
    (x,) = struct.unpack("<d", struct.pack("<q", i))
    return x


def ordinals_vec(xs: np.ndarray) -> np.ndarray:
    i = xs.astype(np.float64).view(np.int64)
    return np.where(i >= 0, i, np.int64(-(2**63)) - i)


def from_ordinal_vec(os: np.ndarray) -> np.ndarray:
    i = np.where(os >= 0, os, np.int64(-(2**63)) - os)
    return i.astype(np.int64).view(np.float64)


def bits_error_vec(approx: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Bits of error per point; NaN approximations score the full 64."""
    oa = ordinals_vec(approx)
    oe = ordinals_vec(exact)
    # int64 subtraction is exact but can overflow when signs differ; the
    # opposite-sign distance |oa| + |oe| always fits uint64
    same = (oa < 0) == (oe < 0)
    with np.errstate(over="ignore"):
        near = np.abs(oa - oe).astype(np.float64)
    far = (np.abs(oa).astype(np.uint64) + np.abs(oe).astype(np.uint64)).astype(
        np.float64
    )
    dist = np.where(same, near, far)
    bits = np.minimum(np.log2(1.0 + dist), MAX_BITS)
    return np.where(np.isnan(approx), MAX_BITS, bits)


def bits_error(approx: float, exact: float) -> float:
    return float(bits_error_vec(np.array([approx]), np.array([exact]))[0])


# ---------------------------------------------------------------------------
# binary64 evaluation via the core tape machine

@dataclass
class Tape:
    code: np.ndarray
    consts: np.ndarray
    arg_names: tuple[str, ...]
    ext_specs: list[tuple[int, Callable[..., float]]]


# Exact extension ops are evaluated through the reference; the same
# (formula, point) pairs recur across every candidate measured against one
# sample set, so the results are memoized process-wide.
_EXACT_CACHE: dict[tuple, float] = {}
_EXACT_CACHE_CAP = 1 << 20


def _exact_fn(platform: Platform, formula: Expr, arity: int) -> Callable[..., float]:
    fkey = print_expr(formula)

    def fn(*args: float) -> float:
        key = (fkey, args)
        hit = _EXACT_CACHE.get(key)
        if hit is not None:
            return hit
        point = {f"t{i + 1}": args[i] for i in range(arity)}
        res = eval_reference(formula, point, platform)
        out = res.f64 if res.status == REF_OK else float("nan")
        if len(_EXACT_CACHE) >= _EXACT_CACHE_CAP:
            _EXACT_CACHE.clear()
        _EXACT_CACHE[key] = out
        return out

    return fn


def compile_tape(e: Expr, arg_names: Sequence[str], platform: Platform) -> Tape:
    """Flatten an expression into a stack-machine tape for the core."""
    code: list[tuple[int, int]] = []
    consts: list[float] = []
    const_idx: dict[float, int] = {}
    ext_specs: list[tuple[int, Callable[..., float]]] = []
    ext_idx: dict[str, int] = {}
    var_pos = {name: i for i, name in enumerate(arg_names)}

    def load_const(value: float) -> None:
        key = value
        idx = const_idx.get(key)
        if idx is None:
            idx = len(consts)
            consts.append(value)
            const_idx[key] = idx
        code.append((T_LOADC, idx))

    def walk(x: Expr) -> None:
        if isinstance(x, Var):
            if x.name not in var_pos:
                raise PlatformError(f"unbound variable {x.name!r}")
            code.append((T_LOADV, var_pos[x.name]))
        elif isinstance(x, Num):
            load_const(float(num_fraction(x)))
        elif isinstance(x, Const):
            load_const(float(np.pi) if x.name == "PI" else float(np.e))
        else:
            for a in x.args:
                walk(a)
            opcode = TAPE_OPCODE.get(x.op)
            if opcode is not None:
                code.append((opcode, 0))
                return
            spec = platform.ops.get(x.op)
            if spec is None or spec.kind != DEFINED:
                raise PlatformError(f"cannot evaluate operator {x.op!r}")
            idx = ext_idx.get(x.op)
            if idx is None:
                idx = len(ext_specs)
                assert spec.formula is not None
                ext_specs.append(
                    (spec.arity, _exact_fn(platform, spec.formula, spec.arity))
                )
                ext_idx[x.op] = idx
            code.append((T_EXT, idx))

    walk(e)
    return Tape(
        np.array(code, dtype=np.int32).reshape(-1, 2),
        np.array(consts, dtype=np.float64),
        tuple(arg_names),
        ext_specs,
    )


def eval_f64_batch(tape: Tape, xs: np.ndarray) -> np.ndarray:
    return core.eval_tape(tape.code, tape.consts, np.ascontiguousarray(xs, dtype=np.float64), tape.ext_specs)


def eval_f64(e: Expr, point: Mapping[str, float], platform: Platform) -> float:
    """Single-point binary64 evaluation under IEEE semantics."""
    names = sorted(point)
    tape = compile_tape(e, names, platform)
    xs = np.array([[point[n] for n in names]], dtype=np.float64)
    return float(eval_f64_batch(tape, xs)[0])


# ---------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class SamplePoint:
    args: tuple[str, ...]
    values: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.args, self.values))


@dataclass
class SampleSet:
    """Valid sample points for a kernel plus the shared ground truth."""

    kernel: Kernel
    xs: np.ndarray  # (n_valid, n_args)
    refs: np.ndarray  # (n_valid,) rounded reference of the kernel body
    n_requested: int
    n_drawn: int
    n_undefined: int
    n_nonconverged: int

    @property
    def n_valid(self) -> int:
        return int(self.xs.shape[0])


def _interval_bounds(kernel: Kernel) -> list[tuple[int, int]]:
    """Per-argument ordinal bounds from the declared precondition.
    Defaults to all finite binary64 values."""
    full = (ordinal(-float(F64_MAX)), ordinal(float(F64_MAX)))
    bounds = {a: full for a in kernel.args}

    def term_value(t: Expr) -> float | None:
        if isinstance(t, Num):
            return float(num_fraction(t))
        if isinstance(t, Const):
            return float(np.pi) if t.name == "PI" else float(np.e)
        if isinstance(t, App) and t.op == "neg" and isinstance(t.args[0], Num):
            return -float(num_fraction(t.args[0]))
        return None

    def clause(c: Expr) -> None:
        if isinstance(c, App) and c.op == "and":
            for a in c.args:
                clause(a)
            return
        assert isinstance(c, App)
        op = c.op
        terms = list(c.args)
        for left, right in zip(terms, terms[1:]):
            if op in (">", ">="):
                left, right = right, left
            strict = op in ("<", ">")
            lv, rv = term_value(left), term_value(right)
            if isinstance(left, Var) and rv is not None:
                lo, hi = bounds[left.name]
                cap = ordinal(rv) - (1 if strict else 0)
                bounds[left.name] = (lo, min(hi, cap))
            elif isinstance(right, Var) and lv is not None:
                lo, hi = bounds[right.name]
                floor = ordinal(lv) + (1 if strict else 0)
                bounds[right.name] = (max(lo, floor), hi)
            # var-var comparisons carry no interval; the numeric
            # precondition filter below enforces them

    if kernel.pre is not None:
        clause(kernel.pre)
    out = []
    for a in kernel.args:
        lo, hi = bounds[a]
        if lo > hi:
            raise SamplingError(
                f"kernel {kernel.name!r}: empty precondition interval for {a!r}"
            )
        out.append((lo, hi))
    return out


def _eval_precond(pre: Expr, xs: np.ndarray, args: Sequence[str]) -> np.ndarray:
    pos = {a: i for i, a in enumerate(args)}

    def term(t: Expr) -> np.ndarray | float:
        if isinstance(t, Var):
            return xs[:, pos[t.name]]
        if isinstance(t, Num):
            return float(num_fraction(t))
        if isinstance(t, Const):
            return float(np.pi) if t.name == "PI" else float(np.e)
        assert isinstance(t, App) and t.op == "neg"
        inner = term(t.args[0])
        return -inner  # type: ignore[operator]

    def clause(c: Expr) -> np.ndarray:
        assert isinstance(c, App)
        if c.op == "and":
            acc = np.ones(xs.shape[0], dtype=bool)
            for a in c.args:
                acc &= clause(a)
            return acc
        cmp = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal}[c.op]
        acc = np.ones(xs.shape[0], dtype=bool)
        vals = [term(t) for t in c.args]
        for left, right in zip(vals, vals[1:]):
            acc &= cmp(left, right)
        return acc

    return clause(pre)


def sample_with_reference(
    kernel: Kernel, n: int, seed: int, platform: Platform | None = None
) -> SampleSet:
    """Draw up to n precondition-valid points, ordinal-uniform per argument,
    with the kernel body's reference value at each.  Points whose reference
    is undefined or fails to converge are discarded; the draw budget is 10n
    and fewer than n/2 valid points is an error."""
    rng = np.random.Generator(
        np.random.PCG64(stable_seed("sample", print_kernel(kernel), n, seed))
    )
    bounds = _interval_bounds(kernel)
    nvars = len(kernel.args)
    budget = 10 * n
    drawn = 0
    undefined = 0
    nonconverged = 0
    keep_xs: list[np.ndarray] = []
    keep_refs: list[float] = []
    kept = 0
    while kept < n and drawn < budget:
        batch = min(max(n, 64), budget - drawn)
        drawn += batch
        cols = []
        for lo, hi in bounds:
            span = np.uint64(hi - lo)
            u = rng.integers(0, int(span) + 1, size=batch, dtype=np.uint64)
            with np.errstate(over="ignore"):
                ords = (u + np.uint64(lo & 0xFFFFFFFFFFFFFFFF)).view(np.int64)
            cols.append(from_ordinal_vec(ords))
        xs = np.column_stack(cols) if cols else np.zeros((batch, 0))
        if kernel.pre is not None and nvars:
            ok = _eval_precond(kernel.pre, xs, kernel.args)
            xs = xs[ok]
        for row in xs:
            if kept >= n:
                break
            point = dict(zip(kernel.args, (float(v) for v in row)))
            res = eval_reference(kernel.body, point, platform)
            if res.status == REF_OK:
                keep_xs.append(row)
                keep_refs.append(res.f64)
                kept += 1
            elif res.status == REF_UNDEFINED:
                undefined += 1
            else:
                nonconverged += 1
    if kept < (n + 1) // 2:
        raise SamplingError(
            f"kernel {kernel.name!r}: only {kept}/{n} valid points within a "
            f"{budget}-draw budget"
        )
    xs_arr = np.array(keep_xs, dtype=np.float64).reshape(kept, nvars)
    return SampleSet(
        kernel=kernel,
        xs=xs_arr,
        refs=np.array(keep_refs, dtype=np.float64),
        n_requested=n,
        n_drawn=drawn,
        n_undefined=undefined,
        n_nonconverged=nonconverged,
    )


def sample_points(kernel: Kernel, n: int, seed: int) -> list[SamplePoint]:
    """Public sampling surface: the valid points only."""
    ss = sample_with_reference(kernel, n, seed)
    return [
        SamplePoint(kernel.args, tuple(float(v) for v in row)) for row in ss.xs
    ]


# ---------------------------------------------------------------------------
# error measurement

@dataclass(frozen=True)
class ErrorReport:
    mean_bits: float
    max_bits: float
    valid_points: int
    invalid_points: int


def measure_on(sset: SampleSet, e: Expr, platform: Platform) -> ErrorReport:
    """Measure e against a sample set's shared ground truth.  Points where
    e is undefined but the kernel is score the full 64 bits."""
    if sset.n_valid == 0:
        return ErrorReport(MAX_BITS, MAX_BITS, 0, sset.n_requested)
    tape = compile_tape(e, sset.kernel.args, platform)
    approx = eval_f64_batch(tape, sset.xs)
    bits = bits_error_vec(approx, sset.refs)
    return ErrorReport(
        mean_bits=float(np.mean(bits)),
        max_bits=float(np.max(bits)),
        valid_points=sset.n_valid,
        invalid_points=sset.n_requested - sset.n_valid,
    )


def measure_error(
    e: Expr, kernel: Kernel, n: int, seed: int, platform: Platform
) -> ErrorReport:
    return measure_on(sample_with_reference(kernel, n, seed, platform), e, platform)


def accuracy(report: ErrorReport) -> float:
    """1 at bitwise-correct, 0 at worst; linear in mean bits of error."""
    return 1.0 - report.mean_bits / MAX_BITS
