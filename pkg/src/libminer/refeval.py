"""Rigorous reference evaluation by interval arithmetic over MPFR.

Every operator maps an enclosure of its inputs to an enclosure of its exact
real result (round-to-nearest endpoints widened outward one ulp), so when
both endpoints of the final enclosure round to the same binary64 value that
value is provably the correctly rounded result.  Precision escalates
128 -> 256 -> 512 -> 1024 until the enclosure decides; an enclosure still
straddling a rounding boundary at the top rung is NON_CONVERGED, and an
enclosure provably outside an operator's domain (or at a pole) is UNDEFINED.

Plain two-rung point-value agreement is not sound here: a cancellation such
as log((1+x)/(1-x)) at x ~ 1e-300 collapses to 0.0 identically at 128 and
256 bits.  The enclosure test subsumes it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

import gmpy2

from .expr import App, Const, Expr, Num, Var, num_fraction
from .platform import DEFINED, Platform

PRECISIONS = (128, 256, 512, 1024)

REF_OK = "ok"
REF_UNDEFINED = "undefined"
REF_NON_CONVERGED = "non_converged"

# fractional distance from a branch boundary below which tan gives up
_TAN_MARGIN = None  # built per call; see _i_tan


class _Undefined(Exception):
    """The exact value provably does not exist (domain error or pole)."""


class _Uncertain(Exception):
    """The enclosure cannot decide at this precision; escalate."""


@dataclass(frozen=True)
class RefResult:
    status: str
    f64: float  # correctly rounded value; NaN unless status == "ok"
    precision: int


_IV = tuple  # (mpfr lo, mpfr hi)


def _widen(lo, hi) -> _IV:
    return (gmpy2.next_below(lo), gmpy2.next_above(hi))


def _check(lo, hi) -> _IV:
    if gmpy2.is_nan(lo) or gmpy2.is_nan(hi):
        raise _Uncertain
    return (lo, hi)


def _i_add(a: _IV, b: _IV) -> _IV:
    return _check(*_widen(a[0] + b[0], a[1] + b[1]))


def _i_sub(a: _IV, b: _IV) -> _IV:
    return _check(*_widen(a[0] - b[1], a[1] - b[0]))


def _i_neg(a: _IV) -> _IV:
    return (-a[1], -a[0])


def _i_abs(a: _IV) -> _IV:
    if a[0] >= 0:
        return a
    if a[1] <= 0:
        return (-a[1], -a[0])
    return (gmpy2.mpfr(0), max(-a[0], a[1]))


def _i_mul(a: _IV, b: _IV) -> _IV:
    ps = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return _check(*_widen(min(ps), max(ps)))


def _i_square(a: _IV) -> _IV:
    m = _i_abs(a)
    return _check(*_widen(m[0] * m[0], m[1] * m[1]))


def _i_div(a: _IV, b: _IV) -> _IV:
    if b[0] <= 0 <= b[1]:
        if gmpy2.is_zero(b[0]) and gmpy2.is_zero(b[1]):
            raise _Undefined  # exact pole
        raise _Uncertain
    ps = [a[0] / b[0], a[0] / b[1], a[1] / b[0], a[1] / b[1]]
    return _check(*_widen(min(ps), max(ps)))


def _mono(fn, a: _IV, increasing: bool = True) -> _IV:
    lo, hi = fn(a[0]), fn(a[1])
    if not increasing:
        lo, hi = hi, lo
    return _check(*_widen(lo, hi))


def _i_sqrt(a: _IV) -> _IV:
    if a[1] < 0:
        raise _Undefined
    if a[0] < 0:
        if gmpy2.is_zero(a[1]) and gmpy2.is_zero(a[0]):
            return (gmpy2.mpfr(0), gmpy2.mpfr(0))
        raise _Uncertain
    return _mono(gmpy2.sqrt, a)


def _i_log(a: _IV) -> _IV:
    if a[1] < 0 or (gmpy2.is_zero(a[0]) and gmpy2.is_zero(a[1])):
        raise _Undefined
    if a[0] <= 0:
        raise _Uncertain
    return _mono(gmpy2.log, a)


def _i_log1p(a: _IV) -> _IV:
    if a[1] < -1 or (a[0] == -1 and a[1] == -1):
        raise _Undefined
    if a[0] <= -1:
        raise _Uncertain
    return _mono(gmpy2.log1p, a)


def _i_asin(a: _IV) -> _IV:
    if a[1] < -1 or a[0] > 1:
        raise _Undefined
    if a[0] < -1 or a[1] > 1:
        raise _Uncertain
    return _mono(gmpy2.asin, a)


def _i_acos(a: _IV) -> _IV:
    if a[1] < -1 or a[0] > 1:
        raise _Undefined
    if a[0] < -1 or a[1] > 1:
        raise _Uncertain
    return _mono(gmpy2.acos, a, increasing=False)


def _i_atanh(a: _IV) -> _IV:
    if a[1] <= -1 or a[0] >= 1:
        raise _Undefined  # poles at +-1 included
    if a[0] <= -1 or a[1] >= 1:
        raise _Uncertain
    return _mono(gmpy2.atanh, a)


def _i_sin_cos(fn, a: _IV) -> _IV:
    # |d(sin)/dx| <= 1, so the image is within the endpoint values plus the
    # interval width; clamp to [-1, 1].
    w = gmpy2.next_above(a[1] - a[0])
    lo, hi = fn(a[0]), fn(a[1])
    if hi < lo:
        lo, hi = hi, lo
    lo = gmpy2.next_below(gmpy2.next_below(lo - w))
    hi = gmpy2.next_above(gmpy2.next_above(hi + w))
    one = gmpy2.mpfr(1)
    return _check(max(lo, -one), min(hi, one))


def _i_tan(a: _IV) -> _IV:
    # Valid only when [a] sits inside one branch, away from the poles at
    # pi/2 + k*pi.  The branch index is floor(x/pi - 1/2); give up when
    # either endpoint is within 2^-40 of a boundary.
    pi = gmpy2.const_pi()
    half = gmpy2.mpfr(1) / 2
    margin = gmpy2.mpfr(2) ** -40
    us = [a[0] / pi - half, a[1] / pi - half]
    ks = []
    for u in us:
        k = gmpy2.floor(u)
        frac = u - k
        if frac < margin or frac > 1 - margin:
            raise _Uncertain
        ks.append(k)
    if ks[0] != ks[1]:
        raise _Uncertain
    return _mono(gmpy2.tan, a)


def _i_atan2(y: _IV, x: _IV) -> _IV:
    x_str = x[0] < 0 < x[1]
    y_str = y[0] < 0 < y[1]
    if x_str and y_str:
        raise _Uncertain  # origin inside the box
    if y_str and x[0] < 0:
        raise _Uncertain  # box crosses the branch cut
    if (
        gmpy2.is_zero(y[0]) and gmpy2.is_zero(y[1])
        and gmpy2.is_zero(x[0]) and gmpy2.is_zero(x[1])
    ):
        raise _Undefined
    corners = [
        gmpy2.atan2(yy, xx) for yy in y for xx in x
    ]
    return _check(*_widen(min(corners), max(corners)))


def _i_hypot(a: _IV, b: _IV) -> _IV:
    aa, bb = _i_abs(a), _i_abs(b)
    return _check(*_widen(gmpy2.hypot(aa[0], bb[0]), gmpy2.hypot(aa[1], bb[1])))


def _i_exp(a: _IV) -> _IV:
    return _mono(gmpy2.exp, a)


def _i_pow(a: _IV, b: _IV) -> _IV:
    b_exact = b[0] == b[1]
    if b_exact and gmpy2.is_integer(b[0]):
        n = int(b[0])
        if n == 0:
            return (gmpy2.mpfr(1), gmpy2.mpfr(1))  # MPFR semantics: 0^0 = 1
        straddle = a[0] < 0 < a[1]
        if n < 0 and (a[0] <= 0 <= a[1]):
            if gmpy2.is_zero(a[0]) and gmpy2.is_zero(a[1]):
                raise _Undefined
            raise _Uncertain
        en = gmpy2.mpfr(n)
        cand = [a[0] ** en, a[1] ** en]
        if straddle:
            cand.append(gmpy2.mpfr(0))
        return _check(*_widen(min(cand), max(cand)))
    if a[0] > 0:
        return _i_exp(_i_mul(b, _i_log(a)))
    if gmpy2.is_zero(a[0]) and gmpy2.is_zero(a[1]):
        if b[0] > 0:
            return (gmpy2.mpfr(0), gmpy2.mpfr(0))
        if b[1] < 0:
            raise _Undefined
        raise _Uncertain
    if a[1] < 0:
        if b_exact:
            raise _Undefined  # negative base, provably non-integer exponent
        raise _Uncertain
    raise _Uncertain


def _i_fma(a: _IV, b: _IV, c: _IV) -> _IV:
    return _i_add(_i_mul(a, b), c)


def _num_interval(n: Num) -> _IV:
    f = num_fraction(n)
    q = gmpy2.mpq(f.numerator, f.denominator)
    v = gmpy2.mpfr(q)
    if gmpy2.mpq(v) == q:
        return (v, v)
    return _widen(v, v)


def _const_interval(name: str) -> _IV:
    if name == "PI":
        v = gmpy2.const_pi()
    else:
        v = gmpy2.exp(gmpy2.mpfr(1))
    return _widen(v, v)


def _ieval(e: Expr, env: Mapping[str, _IV], platform: Platform | None) -> _IV:
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Num):
        return _num_interval(e)
    if isinstance(e, Const):
        return _const_interval(e.name)
    assert isinstance(e, App)
    if platform is not None:
        spec = platform.ops.get(e.op)
        if spec is not None and spec.kind == DEFINED:
            vals = [_ieval(a, env, platform) for a in e.args]
            sub = {f"t{i + 1}": v for i, v in enumerate(vals)}
            assert spec.formula is not None
            return _ieval(spec.formula, sub, platform)
    op = e.op
    if op == "*" and len(e.args) == 2 and e.args[0] == e.args[1]:
        return _i_square(_ieval(e.args[0], env, platform))
    args = [_ieval(a, env, platform) for a in e.args]
    if op == "+":
        return _i_add(args[0], args[1])
    if op == "-":
        return _i_sub(args[0], args[1])
    if op == "*":
        return _i_mul(args[0], args[1])
    if op == "/":
        return _i_div(args[0], args[1])
    if op == "neg":
        return _i_neg(args[0])
    if op == "fabs":
        return _i_abs(args[0])
    if op == "sqrt":
        return _i_sqrt(args[0])
    if op == "cbrt":
        return _mono(gmpy2.cbrt, args[0])
    if op == "fma":
        return _i_fma(args[0], args[1], args[2])
    if op == "sin":
        return _i_sin_cos(gmpy2.sin, args[0])
    if op == "cos":
        return _i_sin_cos(gmpy2.cos, args[0])
    if op == "tan":
        return _i_tan(args[0])
    if op == "asin":
        return _i_asin(args[0])
    if op == "acos":
        return _i_acos(args[0])
    if op == "atan":
        return _mono(gmpy2.atan, args[0])
    if op == "atan2":
        return _i_atan2(args[0], args[1])
    if op == "sinh":
        return _mono(gmpy2.sinh, args[0])
    if op == "cosh":
        return _i_exp_like_cosh(args[0])
    if op == "tanh":
        return _mono(gmpy2.tanh, args[0])
    if op == "atanh":
        return _i_atanh(args[0])
    if op == "exp":
        return _i_exp(args[0])
    if op == "expm1":
        return _mono(gmpy2.expm1, args[0])
    if op == "log":
        return _i_log(args[0])
    if op == "log1p":
        return _i_log1p(args[0])
    if op == "pow":
        return _i_pow(args[0], args[1])
    if op == "hypot":
        return _i_hypot(args[0], args[1])
    raise _Undefined  # unknown operator has no reference semantics


def _i_exp_like_cosh(a: _IV) -> _IV:
    m = _i_abs(a)
    return _mono(gmpy2.cosh, m)


def eval_reference(
    e: Expr, point: Mapping[str, float], platform: Platform | None = None
) -> RefResult:
    """Correctly rounded binary64 value of e at a point of binary64 inputs."""
    for prec in PRECISIONS:
        try:
            with gmpy2.context(precision=prec):
                env = {}
                for name, v in point.items():
                    m = gmpy2.mpfr(v)
                    env[name] = (m, m)
                lo, hi = _ieval(e, env, platform)
                flo, fhi = float(lo), float(hi)
        except _Undefined:
            return RefResult(REF_UNDEFINED, float("nan"), prec)
        except _Uncertain:
            continue
        if struct.pack("<d", flo) == struct.pack("<d", fhi):
            return RefResult(REF_OK, flo, prec)
        if flo == fhi:  # +-0 straddle: value 0 either way
            return RefResult(REF_OK, 0.0, prec)
    return RefResult(REF_NON_CONVERGED, float("nan"), PRECISIONS[-1])
