"""Operator platforms: the costed alphabet a search optimizes against.

A platform maps operator names to cost and semantics.  BUILTIN ops are the
fixed binary64 alphabet; DEFINED ops are named formulas added by extending
the platform with mined candidates, evaluated correctly rounded (the
"expert implementation" optimism) at 1/5 of their naive cost.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .expr import (
    App,
    Const,
    Expr,
    Kernel,
    Num,
    OPERATORS,
    ParseError,
    Var,
    _read_forms,
    _Atom,
    _form_pos,
    expr_size,
    free_vars,
    parse_expr_form,
    print_expr,
)

LEAF_COST = 0.1

# Cost model for the builtin alphabet, in multiples of one multiply.
DEFAULT_COSTS: dict[str, float] = {
    "+": 1.0,
    "-": 1.0,
    "neg": 1.0,
    "fabs": 1.0,
    "*": 1.0,
    "fma": 1.0,
    "/": 3.0,
    "sqrt": 3.0,
    "cbrt": 12.0,
    "hypot": 12.0,
    "sin": 30.0,
    "cos": 30.0,
    "tan": 30.0,
    "asin": 35.0,
    "acos": 35.0,
    "atan": 35.0,
    "atan2": 35.0,
    "sinh": 35.0,
    "cosh": 35.0,
    "tanh": 35.0,
    "atanh": 35.0,
    "exp": 25.0,
    "expm1": 25.0,
    "log": 40.0,
    "log1p": 40.0,
    "pow": 55.0,
}

BUILTIN = "builtin"
DEFINED = "defined"


class PlatformError(ValueError):
    pass


@dataclass(frozen=True)
class OpSpec:
    name: str
    arity: int
    cost: float
    kind: str = BUILTIN
    # DEFINED ops carry a formula over formal arguments t1..tN and are
    # assumed exact: evaluated as the correctly rounded value of the formula.
    formula: Expr | None = None
    assumed_exact: bool = False


@dataclass(frozen=True)
class Platform:
    name: str
    ops: Mapping[str, OpSpec]

    def op_table(self) -> dict[str, int]:
        """Operator -> arity map for the parser."""
        return {name: spec.arity for name, spec in self.ops.items()}

    def defined_ops(self) -> list[OpSpec]:
        return [s for s in self.ops.values() if s.kind == DEFINED]


def default_platform() -> Platform:
    ops = {
        name: OpSpec(name, OPERATORS[name], cost)
        for name, cost in DEFAULT_COSTS.items()
    }
    return Platform("default", ops)


def expr_cost(p: Platform, e: Expr) -> float:
    """Total tree cost: operator costs plus LEAF_COST per leaf."""
    if isinstance(e, App):
        spec = p.ops.get(e.op)
        if spec is None:
            raise PlatformError(f"operator {e.op!r} not in platform {p.name!r}")
        return spec.cost + sum(expr_cost(p, a) for a in e.args)
    return LEAF_COST


def candidate_op_name(pattern: Expr) -> str:
    """Deterministic operator name for a mined pattern."""
    digest = hashlib.blake2b(print_expr(pattern).encode(), digest_size=4)
    return f"prim_{digest.hexdigest()}"


def _check_formula(p: Platform, formula: Expr, arity: int) -> None:
    names = free_vars(formula)
    expected = [f"t{i + 1}" for i in range(arity)]
    if sorted(names) != sorted(expected):
        raise PlatformError(
            f"formula variables {names} do not match formals {expected}"
        )
    for op, spec in _formula_ops(formula).items():
        if op not in p.ops:
            raise PlatformError(f"formula uses unknown operator {op!r}")
        del spec


def _formula_ops(e: Expr) -> dict[str, int]:
    out: dict[str, int] = {}

    def walk(x: Expr) -> None:
        if isinstance(x, App):
            out[x.op] = out.get(x.op, 0) + 1
            for a in x.args:
                walk(a)

    walk(e)
    return out


def extend(p: Platform, pattern: Expr, name: str | None = None) -> tuple[Platform, OpSpec]:
    """Extend p with an exact implementation of pattern.

    The new op's formals are the pattern's free variables renamed t1..tN in
    first-occurrence order, its cost is max(1, naive cost / 5), and a name
    collision (extending twice with the same pattern) is an error.
    """
    names = free_vars(pattern)
    if not names:
        raise PlatformError("candidate pattern has no variables")
    formula = pattern
    if names != [f"t{i + 1}" for i in range(len(names))]:
        from .expr import alpha_normalize

        formula, _ = alpha_normalize(pattern)
    op_name = name if name is not None else candidate_op_name(formula)
    if op_name in p.ops:
        raise PlatformError(f"operator {op_name!r} already in platform {p.name!r}")
    naive = expr_cost(p, formula)
    spec = OpSpec(
        name=op_name,
        arity=len(names),
        cost=max(1.0, naive / 5.0),
        kind=DEFINED,
        formula=formula,
        assumed_exact=True,
    )
    ops = dict(p.ops)
    ops[op_name] = spec
    return Platform(p.name, ops), spec


def extend_all(p: Platform, patterns: Iterable[Expr]) -> Platform:
    for pat in patterns:
        p, _ = extend(p, pat)
    return p


# ---------------------------------------------------------------------------
# platform files
#
#   (op <name> <arity> <cost>)                       cost override / builtin
#   (defop <name> <arity> <cost> exact (<formula>))  defined extension
#
# Formulas may reference previously declared defops (acyclic by construction:
# a defop can only use names already read).

def print_platform(p: Platform) -> str:
    lines = [f"(platform {p.name})"]
    for name, spec in p.ops.items():
        if spec.kind == BUILTIN:
            lines.append(f"(op {name} {spec.arity} {_fmt_cost(spec.cost)})")
    for spec in p.defined_ops():
        assert spec.formula is not None
        lines.append(
            f"(defop {spec.name} {spec.arity} {_fmt_cost(spec.cost)} exact "
            f"{print_expr(spec.formula)})"
        )
    return "\n".join(lines) + "\n"


def _fmt_cost(c: float) -> str:
    return repr(c)


def parse_platform(text: str) -> Platform:
    base = default_platform()
    ops = dict(base.ops)
    name = "default"
    for form in _read_forms(text):
        line, col = _form_pos(form)
        if isinstance(form, _Atom) or not form or not isinstance(form[0], _Atom):
            raise ParseError("expected (platform|op|defop ...) form", line, col)
        head = form[0].text
        if head == "platform":
            if len(form) != 2 or not isinstance(form[1], _Atom):
                raise ParseError("(platform <name>) takes one name", line, col)
            name = form[1].text
        elif head == "op":
            if len(form) != 4 or not all(isinstance(f, _Atom) for f in form[1:]):
                raise ParseError("(op <name> <arity> <cost>)", line, col)
            op = form[1].text
            if op not in OPERATORS:
                raise ParseError(f"unknown builtin {op!r}", form[1].line, form[1].col)
            arity = _parse_int(form[2])
            if arity != OPERATORS[op]:
                raise ParseError(
                    f"builtin {op!r} has arity {OPERATORS[op]}", form[2].line, form[2].col
                )
            ops[op] = OpSpec(op, arity, _parse_cost(form[3]))
        elif head == "defop":
            if len(form) != 6:
                raise ParseError(
                    "(defop <name> <arity> <cost> exact <formula>)", line, col
                )
            if not all(isinstance(f, _Atom) for f in form[1:5]):
                raise ParseError("malformed defop header", line, col)
            op = form[1].text
            if op in ops:
                raise ParseError(f"duplicate operator {op!r}", form[1].line, form[1].col)
            arity = _parse_int(form[2])
            cost = _parse_cost(form[3])
            if form[4].text != "exact":
                raise ParseError(
                    "only 'exact' defops are supported", form[4].line, form[4].col
                )
            table = {n: s.arity for n, s in ops.items()}
            formula = parse_expr_form(form[5], table)
            partial = Platform(name, dict(ops))
            _check_formula(partial, formula, arity)
            ops[op] = OpSpec(op, arity, cost, DEFINED, formula, True)
        else:
            raise ParseError(f"unknown form {head!r}", line, col)
    return Platform(name, ops)


def _parse_int(tok: _Atom) -> int:
    try:
        return int(tok.text)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok.text!r}", tok.line, tok.col)


def _parse_cost(tok: _Atom) -> float:
    try:
        return float(Fraction(tok.text))
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"expected a cost, got {tok.text!r}", tok.line, tok.col)
