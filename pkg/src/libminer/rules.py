"""Rewrite rules: the algebraic identities driving equality saturation.

A rule rewrites a pattern (variables written ?a, ?b, ...) to an equivalent
pattern, optionally guarded by side conditions that must be discharged
against the e-graph before the rewrite fires.  Equality is weak (Kleene):
both sides agree wherever both are defined; measurement absorbs any domain
difference.  Every shipped rule is checked numerically by high-precision
agreement sampling (see verify_rule).
"""
from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import numpy as np

from .coredefs import COND_KINDS
from .expr import (
    App,
    Expr,
    OPERATORS,
    ParseError,
    Var,
    _Atom,
    _form_pos,
    _read_forms,
    free_vars,
    parse_expr_form,
    print_expr,
)
from .platform import DEFINED, Platform
from .util import stable_seed


@dataclass(frozen=True)
class Rule:
    name: str
    lhs: Expr
    rhs: Expr
    conds: tuple[tuple[str, str], ...] = ()  # (kind, pattern var)

    def pattern_vars(self) -> list[str]:
        # lhs binds; rhs may only use bound vars
        return free_vars(self.lhs)


class RuleError(ValueError):
    pass


def _validate(rule: Rule) -> Rule:
    bound = set(rule.pattern_vars())
    for v in bound:
        if not v.startswith("?"):
            raise RuleError(f"rule {rule.name}: lhs variable {v!r} is not a ?var")
    for v in free_vars(rule.rhs):
        if v not in bound:
            raise RuleError(f"rule {rule.name}: rhs variable {v!r} unbound")
    for kind, v in rule.conds:
        if kind not in COND_KINDS:
            raise RuleError(f"rule {rule.name}: unknown condition {kind!r}")
        if v not in bound:
            raise RuleError(f"rule {rule.name}: condition variable {v!r} unbound")
    return rule


# ---------------------------------------------------------------------------
# rule files
#
#   (rule <name> <lhs> <rhs>)
#   (rule <name> <lhs> <rhs> (when (positive ?a) (nonzero ?b)))

def parse_rules(text: str) -> list[Rule]:
    out: list[Rule] = []
    for form in _read_forms(text):
        line, col = _form_pos(form)
        if (
            isinstance(form, _Atom)
            or len(form) not in (4, 5)
            or not isinstance(form[0], _Atom)
            or form[0].text != "rule"
            or not isinstance(form[1], _Atom)
        ):
            raise ParseError("expected (rule <name> <lhs> <rhs> <when?>)", line, col)
        name = form[1].text
        lhs = parse_expr_form(form[2], OPERATORS, allow_pattern_vars=True)
        rhs = parse_expr_form(form[3], OPERATORS, allow_pattern_vars=True)
        conds: list[tuple[str, str]] = []
        if len(form) == 5:
            wf = form[4]
            wline, wcol = _form_pos(wf)
            if (
                isinstance(wf, _Atom)
                or not wf
                or not isinstance(wf[0], _Atom)
                or wf[0].text != "when"
            ):
                raise ParseError("expected (when <cond>...)", wline, wcol)
            for cf in wf[1:]:
                cline, ccol = _form_pos(cf)
                if (
                    isinstance(cf, _Atom)
                    or len(cf) != 2
                    or not isinstance(cf[0], _Atom)
                    or not isinstance(cf[1], _Atom)
                ):
                    raise ParseError("expected (<kind> ?var)", cline, ccol)
                conds.append((cf[0].text, cf[1].text))
        out.append(_validate(Rule(name, lhs, rhs, tuple(conds))))
    return out


def print_rules(rules: list[Rule]) -> str:
    lines = []
    for r in rules:
        base = f"(rule {r.name} {print_expr(r.lhs)} {print_expr(r.rhs)}"
        if r.conds:
            conds = " ".join(f"({k} {v})" for k, v in r.conds)
            base += f" (when {conds})"
        lines.append(base + ")")
    return "\n".join(lines) + "\n"


# The default rule set.  Guarded log/quotient rules keep partial-domain
# rewrites from firing where positivity is unknown; the guards discharge
# against literal signs, structural facts, and declared input intervals.
DEFAULT_RULES_TEXT = """
(rule add-comm (+ ?a ?b) (+ ?b ?a))
(rule mul-comm (* ?a ?b) (* ?b ?a))
(rule add-assoc-l (+ (+ ?a ?b) ?c) (+ ?a (+ ?b ?c)))
(rule add-assoc-r (+ ?a (+ ?b ?c)) (+ (+ ?a ?b) ?c))
(rule mul-assoc-l (* (* ?a ?b) ?c) (* ?a (* ?b ?c)))
(rule mul-assoc-r (* ?a (* ?b ?c)) (* (* ?a ?b) ?c))
(rule distribute (* ?a (+ ?b ?c)) (+ (* ?a ?b) (* ?a ?c)))
(rule factor (+ (* ?a ?b) (* ?a ?c)) (* ?a (+ ?b ?c)))
(rule distribute-sub (* ?a (- ?b ?c)) (- (* ?a ?b) (* ?a ?c)))
(rule factor-sub (- (* ?a ?b) (* ?a ?c)) (* ?a (- ?b ?c)))
(rule add-zero (+ ?a 0) ?a)
(rule mul-one (* ?a 1) ?a)
(rule mul-zero (* ?a 0) 0)
(rule div-one (/ ?a 1) ?a)
(rule sub-self (- ?a ?a) 0)
(rule div-self (/ ?a ?a) 1 (when (nonzero ?a)))
(rule sub-to-neg (- ?a ?b) (+ ?a (neg ?b)))
(rule neg-to-sub (+ ?a (neg ?b)) (- ?a ?b))
(rule neg-neg (neg (neg ?a)) ?a)
(rule neg-via-zero (neg ?a) (- 0 ?a))
(rule zero-sub (- 0 ?a) (neg ?a))
(rule neg-mul-l (neg (* ?a ?b)) (* (neg ?a) ?b))
(rule mul-neg-l (* (neg ?a) ?b) (neg (* ?a ?b)))
(rule neg-flip-sub (neg (- ?a ?b)) (- ?b ?a))
(rule neg-add-dist (neg (+ ?a ?b)) (+ (neg ?a) (neg ?b)))
(rule neg-add-fact (+ (neg ?a) (neg ?b)) (neg (+ ?a ?b)))
(rule add-sub-cancel (- (+ ?a ?b) ?b) ?a)
(rule sub-add-cancel (+ (- ?a ?b) ?b) ?a)
(rule sub-sum-cancel (- ?a (+ ?a ?b)) (neg ?b))
(rule mul-div-cancel (* (/ ?a ?b) ?b) ?a)
(rule div-mul-cancel (/ (* ?a ?b) ?b) ?a)
(rule div-to-recip (/ ?a ?b) (* ?a (/ 1 ?b)))
(rule recip-to-div (* ?a (/ 1 ?b)) (/ ?a ?b))
(rule frac-join (+ (/ ?a ?c) (/ ?b ?c)) (/ (+ ?a ?b) ?c))
(rule frac-split (/ (+ ?a ?b) ?c) (+ (/ ?a ?c) (/ ?b ?c)))
(rule frac-split-sub (/ (- ?a ?b) ?c) (- (/ ?a ?c) (/ ?b ?c)))
(rule frac-join-sub (- (/ ?a ?c) (/ ?b ?c)) (/ (- ?a ?b) ?c))
(rule div-sub-one (- (/ ?a ?b) 1) (/ (- ?a ?b) ?b))
(rule one-sub-div (- 1 (/ ?a ?b)) (/ (- ?b ?a) ?b))
(rule frac-mul (* (/ ?a ?b) (/ ?c ?d)) (/ (* ?a ?c) (* ?b ?d)))
(rule div-div-down (/ (/ ?a ?b) ?c) (/ ?a (* ?b ?c)))
(rule div-div-up (/ ?a (/ ?b ?c)) (/ (* ?a ?c) ?b))
(rule mul-div-assoc (/ (* ?a ?b) ?c) (* ?a (/ ?b ?c)))
(rule log-mul (log (* ?a ?b)) (+ (log ?a) (log ?b)) (when (positive ?a) (positive ?b)))
(rule log-div (log (/ ?a ?b)) (- (log ?a) (log ?b)) (when (positive ?a) (positive ?b)))
(rule log-flip (log (/ ?a ?b)) (neg (log (/ ?b ?a))))
(rule log-pow (log (pow ?a ?b)) (* ?b (log ?a)) (when (positive ?a)))
(rule log-exp (log (exp ?a)) ?a)
(rule exp-log (exp (log ?a)) ?a (when (positive ?a)))
(rule exp-add (exp (+ ?a ?b)) (* (exp ?a) (exp ?b)))
(rule exp-sub (exp (- ?a ?b)) (/ (exp ?a) (exp ?b)))
(rule exp-neg (exp (neg ?a)) (/ 1 (exp ?a)))
(rule exp-mul-pow (exp (* ?a ?b)) (pow (exp ?a) ?b))
(rule log1p-intro (log (+ 1 ?a)) (log1p ?a))
(rule log1p-elim (log1p ?a) (log (+ 1 ?a)))
(rule expm1-intro (- (exp ?a) 1) (expm1 ?a))
(rule expm1-elim (expm1 ?a) (- (exp ?a) 1))
(rule atanh-elim (atanh ?a) (* 0.5 (log (/ (+ 1 ?a) (- 1 ?a)))))
(rule atanh-intro (* 0.5 (log (/ (+ 1 ?a) (- 1 ?a)))) (atanh ?a))
(rule tanh-elim (tanh ?a) (/ (sinh ?a) (cosh ?a)))
(rule sinh-elim (sinh ?a) (/ (- (exp ?a) (exp (neg ?a))) 2))
(rule cosh-elim (cosh ?a) (/ (+ (exp ?a) (exp (neg ?a))) 2))
(rule tanh-atanh (tanh (atanh ?a)) ?a)
(rule sin-neg (sin (neg ?a)) (neg (sin ?a)))
(rule cos-neg (cos (neg ?a)) (cos ?a))
(rule tan-elim (tan ?a) (/ (sin ?a) (cos ?a)))
(rule sin-sq-cos-sq (+ (* (sin ?a) (sin ?a)) (* (cos ?a) (cos ?a))) 1)
(rule cos-double-sin (cos (* 2 ?a)) (- 1 (* 2 (* (sin ?a) (sin ?a)))))
(rule cos-double-cos (cos (* 2 ?a)) (- (* 2 (* (cos ?a) (cos ?a))) 1))
(rule sin-double (sin (* 2 ?a)) (* 2 (* (sin ?a) (cos ?a))))
(rule sin-sum (sin (+ ?a ?b)) (+ (* (sin ?a) (cos ?b)) (* (cos ?a) (sin ?b))))
(rule cos-sum (cos (+ ?a ?b)) (- (* (cos ?a) (cos ?b)) (* (sin ?a) (sin ?b))))
(rule sin-asin (sin (asin ?a)) ?a)
(rule cos-acos (cos (acos ?a)) ?a)
(rule tan-atan (tan (atan ?a)) ?a)
(rule pow-zero (pow ?a 0) 1)
(rule pow-one (pow ?a 1) ?a)
(rule pow-two (pow ?a 2) (* ?a ?a))
(rule sq-to-pow (* ?a ?a) (pow ?a 2))
(rule pow-three (pow ?a 3) (* ?a (* ?a ?a)))
(rule pow-four (pow ?a 4) (* (pow ?a 2) (pow ?a 2)))
(rule pow-six (pow ?a 6) (* (pow ?a 2) (pow ?a 4)))
(rule pow-prod (* (pow ?a ?b) (pow ?a ?c)) (pow ?a (+ ?b ?c)) (when (positive ?a)))
(rule pow-half (pow ?a 0.5) (sqrt ?a))
(rule sqrt-to-pow (sqrt ?a) (pow ?a 0.5))
(rule sqrt-sq-abs (sqrt (* ?a ?a)) (fabs ?a))
(rule sqrt-mul-sqrt (* (sqrt ?a) (sqrt ?a)) ?a)
(rule sqrt-prod (sqrt (* ?a ?b)) (* (sqrt ?a) (sqrt ?b)) (when (nonneg ?a) (nonneg ?b)))
(rule hypot-intro (sqrt (+ (* ?a ?a) (* ?b ?b))) (hypot ?a ?b))
(rule hypot-elim (hypot ?a ?b) (sqrt (+ (* ?a ?a) (* ?b ?b))))
(rule abs-neg (fabs (neg ?a)) (fabs ?a))
(rule abs-id (fabs ?a) ?a (when (nonneg ?a)))
(rule abs-sq (* (fabs ?a) (fabs ?a)) (* ?a ?a))
(rule fma-intro (+ (* ?a ?b) ?c) (fma ?a ?b ?c))
(rule fma-elim (fma ?a ?b ?c) (+ (* ?a ?b) ?c))
(rule cbrt-cube (cbrt (pow ?a 3)) ?a)
(rule cube-cbrt (pow (cbrt ?a) 3) ?a)
(rule atan2-to-atan (atan2 ?a ?b) (atan (/ ?a ?b)) (when (positive ?b)))
(rule atan-to-atan2 (atan (/ ?a ?b)) (atan2 ?a ?b) (when (positive ?b)))
"""


# Expansion rules pad every class with a trivially wrapped form (x as x*1,
# x+0).  They let definition patterns like f(a*b) match a lone variable, so
# the implication analysis can see f(t1, 1).  Kept out of the default set:
# candidate mining wants harvests free of wrapper noise.
EXPANSION_RULES_TEXT = """
(rule mul-one-intro ?a (* ?a 1))
(rule add-zero-intro ?a (+ ?a 0))
"""


def default_rules() -> list[Rule]:
    return parse_rules(DEFAULT_RULES_TEXT)


def expansion_rules() -> list[Rule]:
    return parse_rules(EXPANSION_RULES_TEXT)


def definition_rules(platform: Platform) -> list[Rule]:
    """Bidirectional rules linking each DEFINED op to its formula, so the
    optimizer can both introduce and expand extension calls."""
    out: list[Rule] = []
    for spec in platform.defined_ops():
        assert spec.formula is not None
        binding = {
            f"t{i + 1}": Var(f"?t{i + 1}") for i in range(spec.arity)
        }
        from .expr import substitute

        body = substitute(spec.formula, binding)
        call = App(spec.name, tuple(Var(f"?t{i + 1}") for i in range(spec.arity)))
        out.append(Rule(f"def-{spec.name}", body, call))
        out.append(Rule(f"undef-{spec.name}", call, body))
    return out


# ---------------------------------------------------------------------------
# numeric rule verification

def _cond_ok(kind: str, v: float) -> bool:
    if kind == "positive":
        return v > 0
    if kind == "nonneg":
        return v >= 0
    return v != 0


def verify_rule(
    rule: Rule,
    n: int = 10_000,
    seed: int = 0,
    min_agree_bits: int = 100,
) -> tuple[int, int]:
    """Sample the rule's side-condition domain and compare lhs/rhs by
    high-precision interval evaluation.  A sampled point counts as checked
    once both sides' enclosures are finite and narrow to min_agree_bits of
    relative width, escalating precision until they are; the sides agree
    when the enclosures overlap or sit within 2^-min_agree_bits of each
    other.  Returns (agreeing, checked).
    """
    from .numerics import F64_MAX, from_ordinal, ordinal
    from .refeval import PRECISIONS, _ieval, _Uncertain, _Undefined

    names = free_vars(rule.lhs)
    rng = np.random.Generator(
        np.random.PCG64(stable_seed("verify", rule.name, n, seed))
    )
    conds_by_var: dict[str, list[str]] = {}
    for kind, v in rule.conds:
        conds_by_var.setdefault(v, []).append(kind)
    checked = 0
    agree = 0
    attempts = 0
    max_attempts = 40 * n
    olo, ohi = ordinal(-float(F64_MAX)), ordinal(float(F64_MAX))
    # Absolute slack floor: enclosures this tight around zero hold more
    # agreement than any binary64-relevant magnitude can distinguish.
    abs_floor_exp = -1200

    def narrow(lo, hi) -> bool:
        width = hi - lo
        if width == 0:
            return True
        scale = max(abs(lo), abs(hi))
        rel = scale * (gmpy2.mpfr(2) ** (-min_agree_bits - 8))
        return width <= max(rel, gmpy2.mpfr(2) ** abs_floor_exp)

    while checked < n and attempts < max_attempts:
        attempts += 1
        point: dict[str, float] = {}
        ok = True
        for name in names:
            v = from_ordinal(int(rng.integers(olo, ohi + 1)))
            for kind in conds_by_var.get(name, ()):
                if not _cond_ok(kind, v):
                    ok = False
            point[name] = v
        if not ok:
            continue
        verdict = None  # None: never converged; True/False: agree result
        undefined = False
        for prec in PRECISIONS:
            with gmpy2.context(precision=prec):
                env = {
                    nm: (gmpy2.mpfr(v), gmpy2.mpfr(v)) for nm, v in point.items()
                }
                try:
                    llo, lhi = _ieval(rule.lhs, env, None)
                    rlo, rhi = _ieval(rule.rhs, env, None)
                except _Undefined:
                    undefined = True
                    break
                except _Uncertain:
                    continue
                if not (
                    gmpy2.is_finite(llo) and gmpy2.is_finite(lhi)
                    and gmpy2.is_finite(rlo) and gmpy2.is_finite(rhi)
                ):
                    # consistent overflow/underflow is outside the comparison
                    undefined = True
                    break
                if not (narrow(llo, lhi) and narrow(rlo, rhi)):
                    continue
                if lhi < rlo:
                    gap = rlo - lhi
                elif rhi < llo:
                    gap = llo - rhi
                else:
                    verdict = True  # enclosures overlap
                    break
                scale = max(abs(llo), abs(lhi), abs(rlo), abs(rhi))
                verdict = bool(
                    gap <= scale * (gmpy2.mpfr(2) ** (-min_agree_bits))
                )
                break
        if undefined or verdict is None:
            continue
        checked += 1
        if verdict:
            agree += 1
    return agree, checked
