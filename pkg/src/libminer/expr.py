"""Expression trees and the FPCore-subset reader and printer.

The expression language is a fixed alphabet of real-valued operators over
binary64 inputs.  Numeric literals are kept as exact decimal/rational strings
in a canonical form so that structural equality is value equality and
parse(print(e)) round-trips.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence, Union

# Operator name -> arity for the builtin alphabet.  This is the parser's
# default table; callers with extended platforms pass their own.
OPERATORS: dict[str, int] = {
    "+": 2,
    "-": 2,
    "*": 2,
    "/": 2,
    "neg": 1,
    "fabs": 1,
    "sqrt": 1,
    "cbrt": 1,
    "fma": 3,
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "asin": 1,
    "acos": 1,
    "atan": 1,
    "atan2": 2,
    "sinh": 1,
    "cosh": 1,
    "tanh": 1,
    "atanh": 1,
    "exp": 1,
    "expm1": 1,
    "log": 1,
    "log1p": 1,
    "pow": 2,
    "hypot": 2,
}

CONSTANTS = ("PI", "E")

# Precondition-only operators (n-ary, n >= 2).  Comparisons chain like
# (<= -1 x 1); "and" conjoins clauses.  These never appear in kernel bodies.
PRECOND_OPS = ("and", "<", "<=", ">", ">=")


class ParseError(ValueError):
    """Syntax or structure error in FPCore input, with source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Num:
    value: str  # canonical exact decimal or p/q rational string


@dataclass(frozen=True)
class Const:
    name: str  # "PI" or "E"


@dataclass(frozen=True)
class App:
    op: str
    args: tuple["Expr", ...]


Expr = Union[Var, Num, Const, App]


@dataclass(frozen=True)
class Kernel:
    """One benchmark kernel: a named expression with arguments and an
    optional precondition restricting the sampled input region."""

    name: str
    args: tuple[str, ...]
    body: Expr
    pre: Expr | None = None


# ---------------------------------------------------------------------------
# numeric literals

_FRACTION_CACHE: dict[str, Fraction] = {}


def num_fraction(n: Num) -> Fraction:
    """Exact rational value of a literal."""
    f = _FRACTION_CACHE.get(n.value)
    if f is None:
        f = Fraction(n.value)
        _FRACTION_CACHE[n.value] = f
    return f


def format_fraction(f: Fraction) -> str:
    """Canonical literal text for an exact rational.

    Integers print bare, dyadic/decimal values print as (possibly
    scientific) decimals, everything else prints as p/q.  The rendering is a
    pure function of the value, which keeps literal equality structural.
    """
    if f.denominator == 1:
        return str(f.numerator)
    den = f.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{f.numerator}/{f.denominator}"
    shift = max(twos, fives)
    scaled = abs(f.numerator) * 10**shift // f.denominator
    while shift > 0 and scaled % 10 == 0:
        scaled //= 10
        shift -= 1
    sign = "-" if f.numerator < 0 else ""
    digits = str(scaled)
    exp10 = len(digits) - 1 - shift
    if exp10 < -8 or exp10 > 16:
        mant = digits[0] if len(digits) == 1 else f"{digits[0]}.{digits[1:]}"
        return f"{sign}{mant}e{exp10}"
    if shift == 0:
        return f"{sign}{digits}"
    if len(digits) <= shift:
        return f"{sign}0.{'0' * (shift - len(digits))}{digits}"
    return f"{sign}{digits[:-shift]}.{digits[-shift:]}"


def make_num(text: str) -> Num:
    """Literal from source text, canonicalized."""
    return Num(format_fraction(Fraction(text)))


# ---------------------------------------------------------------------------
# traversals

def free_vars(e: Expr) -> list[str]:
    """Free variable names in first-occurrence (leftmost) order."""
    seen: dict[str, None] = {}

    def walk(x: Expr) -> None:
        if isinstance(x, Var):
            seen.setdefault(x.name, None)
        elif isinstance(x, App):
            for a in x.args:
                walk(a)

    walk(e)
    return list(seen)


def substitute(e: Expr, binding: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return binding.get(e.name, e)
    if isinstance(e, App):
        return App(e.op, tuple(substitute(a, binding) for a in e.args))
    return e


def subexpressions(e: Expr) -> set[Expr]:
    """All App-rooted subterms of e, including e itself when e is an App.
    Bare leaves are excluded."""
    out: set[Expr] = set()

    def walk(x: Expr) -> None:
        if isinstance(x, App):
            out.add(x)
            for a in x.args:
                walk(a)

    walk(e)
    return out


def subexpr_multiplicity(e: Expr) -> dict[Expr, int]:
    """App-rooted subterms -> number of structural positions at which they
    occur.  Iteration order is first-occurrence, which keeps downstream
    bookkeeping deterministic."""
    out: dict[Expr, int] = {}

    def walk(x: Expr) -> None:
        if isinstance(x, App):
            out[x] = out.get(x, 0) + 1
            for a in x.args:
                walk(a)

    walk(e)
    return out


def expr_size(e: Expr) -> int:
    """Node count, leaves included."""
    if isinstance(e, App):
        return 1 + sum(expr_size(a) for a in e.args)
    return 1


def alpha_normalize(e: Expr, prefix: str = "t") -> tuple[Expr, dict[str, str]]:
    """Rename free variables to prefix1..prefixK in first-occurrence order.
    Returns the renamed expression and the old->new name map."""
    names = free_vars(e)
    mapping = {old: f"{prefix}{i + 1}" for i, old in enumerate(names)}
    return substitute(e, {old: Var(new) for old, new in mapping.items()}), mapping


def count_ops(e: Expr) -> dict[str, int]:
    """Operator -> occurrence count over all App nodes."""
    out: dict[str, int] = {}

    def walk(x: Expr) -> None:
        if isinstance(x, App):
            out[x.op] = out.get(x.op, 0) + 1
            for a in x.args:
                walk(a)

    walk(e)
    return out


# ---------------------------------------------------------------------------
# printing

def print_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Const):
        return e.name
    parts = " ".join(print_expr(a) for a in e.args)
    return f"({e.op} {parts})"


def print_kernel(k: Kernel) -> str:
    args = " ".join(k.args)
    if k.pre is not None:
        return f"(FPCore {k.name} ({args}) :pre {print_expr(k.pre)} {print_expr(k.body)})"
    return f"(FPCore {k.name} ({args}) {print_expr(k.body)})"


def print_corpus(kernels: Sequence[Kernel]) -> str:
    return "\n".join(print_kernel(k) for k in kernels) + "\n"


# ---------------------------------------------------------------------------
# reading

@dataclass(frozen=True)
class _Atom:
    text: str
    line: int
    col: int


_SForm = Union[_Atom, list]


def _tokenize(text: str) -> Iterator[_Atom]:
    line = 1
    col = 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c in " \t\r":
            col += 1
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            yield _Atom(c, line, col)
            col += 1
            i += 1
        else:
            start = i
            start_col = col
            while i < n and text[i] not in " \t\r\n();":
                i += 1
                col += 1
            yield _Atom(text[start:i], line, start_col)


def _read_forms(text: str) -> list[_SForm]:
    stack: list[list] = [[]]
    opens: list[_Atom] = []
    for tok in _tokenize(text):
        if tok.text == "(":
            new: list = []
            stack[-1].append(new)
            stack.append(new)
            opens.append(tok)
        elif tok.text == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
            opens.pop()
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ParseError("unclosed '('", opens[-1].line, opens[-1].col)
    return stack[0]


def _form_pos(form: _SForm) -> tuple[int, int]:
    while isinstance(form, list):
        if not form:
            return (0, 0)
        form = form[0]
    return (form.line, form.col)


_IDENT_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def _is_identifier(text: str) -> bool:
    return bool(text) and text[0] not in "0123456789" and all(c in _IDENT_OK for c in text)


def parse_expr_form(
    form: _SForm,
    operators: Mapping[str, int] = OPERATORS,
    allow_compare: bool = False,
    allow_pattern_vars: bool = False,
) -> Expr:
    if isinstance(form, _Atom):
        text = form.text
        if text in CONSTANTS:
            return Const(text)
        try:
            return make_num(text)
        except (ValueError, ZeroDivisionError):
            pass
        if allow_pattern_vars and text.startswith("?") and _is_identifier(text[1:]):
            return Var(text)
        if _is_identifier(text):
            return Var(text)
        raise ParseError(f"unreadable token {text!r}", form.line, form.col)
    line, col = _form_pos(form)
    if not form:
        raise ParseError("empty form", line, col)
    head = form[0]
    if not isinstance(head, _Atom):
        raise ParseError("operator position holds a list", line, col)
    op = head.text
    args = [
        parse_expr_form(f, operators, allow_compare, allow_pattern_vars)
        for f in form[1:]
    ]
    if op in operators:
        arity = operators[op]
        if len(args) != arity:
            # FPCore writes unary negation with the subtraction symbol.
            if op == "-" and len(args) == 1:
                return App("neg", tuple(args))
            raise ParseError(
                f"operator {op!r} takes {arity} argument(s), got {len(args)}",
                head.line,
                head.col,
            )
        return App(op, tuple(args))
    if allow_compare and op in PRECOND_OPS:
        if len(args) < 2:
            raise ParseError(
                f"{op!r} needs at least 2 arguments", head.line, head.col
            )
        return App(op, tuple(args))
    raise ParseError(f"unknown operator {op!r}", head.line, head.col)


def _check_precondition(pre: Expr, args: set[str], line: int, col: int) -> None:
    """Preconditions are conjunctions of comparison chains over the kernel's
    arguments and exact constants."""
    if isinstance(pre, App) and pre.op == "and":
        for a in pre.args:
            _check_precondition(a, args, line, col)
        return
    if isinstance(pre, App) and pre.op in ("<", "<=", ">", ">="):
        for a in pre.args:
            if isinstance(a, Var):
                if a.name not in args:
                    raise ParseError(
                        f"precondition references unknown argument {a.name!r}",
                        line,
                        col,
                    )
            elif isinstance(a, App) and a.op == "neg" and isinstance(a.args[0], Num):
                pass
            elif not isinstance(a, (Num, Const)):
                raise ParseError(
                    "precondition comparisons may only mix arguments and constants",
                    line,
                    col,
                )
        return
    raise ParseError(
        "precondition must be a conjunction of comparisons", line, col
    )


def parse_fpcore(
    text: str, operators: Mapping[str, int] = OPERATORS
) -> list[Kernel]:
    """Read a corpus: a sequence of (FPCore name? (args...) :pre? body)
    forms.  Unsupported properties and operators are parse errors with
    source positions."""
    kernels: list[Kernel] = []
    for idx, form in enumerate(_read_forms(text)):
        line, col = _form_pos(form)
        if isinstance(form, _Atom) or not form:
            raise ParseError("expected an (FPCore ...) form", line, col)
        head = form[0]
        if not isinstance(head, _Atom) or head.text != "FPCore":
            raise ParseError("expected an (FPCore ...) form", line, col)
        rest = form[1:]
        if rest and isinstance(rest[0], _Atom):
            name_tok = rest[0]
            if not _is_identifier(name_tok.text):
                raise ParseError(
                    f"bad kernel name {name_tok.text!r}", name_tok.line, name_tok.col
                )
            name = name_tok.text
            rest = rest[1:]
        else:
            name = f"kernel{idx + 1}"
        if not rest or not isinstance(rest[0], list):
            raise ParseError("expected an argument list", line, col)
        arg_names: list[str] = []
        for a in rest[0]:
            if not isinstance(a, _Atom) or not _is_identifier(a.text):
                aline, acol = _form_pos(a)
                raise ParseError("arguments must be identifiers", aline, acol)
            if a.text in CONSTANTS:
                raise ParseError(
                    f"argument shadows constant {a.text!r}", a.line, a.col
                )
            if a.text in arg_names:
                raise ParseError(f"duplicate argument {a.text!r}", a.line, a.col)
            arg_names.append(a.text)
        rest = rest[1:]
        pre: Expr | None = None
        while rest and isinstance(rest[0], _Atom) and rest[0].text.startswith(":"):
            prop = rest[0]
            if len(rest) < 2:
                raise ParseError(
                    f"property {prop.text} has no value", prop.line, prop.col
                )
            if prop.text != ":pre":
                raise ParseError(
                    f"unsupported property {prop.text}", prop.line, prop.col
                )
            pre = parse_expr_form(rest[1], operators, allow_compare=True)
            _check_precondition(pre, set(arg_names), prop.line, prop.col)
            rest = rest[2:]
        if len(rest) != 1:
            raise ParseError(
                "expected exactly one body expression", line, col
            )
        body = parse_expr_form(rest[0], operators)
        for v in free_vars(body):
            bline, bcol = _form_pos(rest[0])
            if v not in arg_names:
                raise ParseError(f"unbound variable {v!r} in body", bline, bcol)
        kernels.append(Kernel(name, tuple(arg_names), body, pre))
    return kernels


def parse_expr(
    text: str,
    operators: Mapping[str, int] = OPERATORS,
    allow_pattern_vars: bool = False,
) -> Expr:
    """Read a single standalone expression."""
    forms = _read_forms(text)
    if len(forms) != 1:
        raise ParseError("expected exactly one expression", 1, 1)
    return parse_expr_form(
        forms[0], operators, allow_pattern_vars=allow_pattern_vars
    )
