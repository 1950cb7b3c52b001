"""Shared encodings for the compiled core and its pure-Python fallback.

Both backends consume the same integer encodings so their behavior can be
compared instruction for instruction.
"""
from __future__ import annotations

from .expr import OPERATORS

# --- e-graph node encoding -------------------------------------------------
# A node is an (op, a, b, c) quadruple of ints.  Ops 0 and 1 are leaves whose
# slot `a` holds an opaque payload index (variable or literal table entry);
# for every other op the slots hold child e-class ids, -1 marking unused
# slots.  Pattern programs reuse the layout with slot values >= 0 meaning
# "pattern node index" and values <= -2 meaning "pattern variable -(v+2)".
EG_VAR = 0
EG_LIT = 1
EG_FIRST_OP = 2

# --- tape encoding ---------------------------------------------------------
# A tape instruction is an (opcode, operand) pair.  LOADV pushes an input
# column, LOADC pushes a constant, builtin opcodes pop their arity and push
# one result, EXT calls back into Python for defined (assumed-exact) ops.
T_LOADV = 0
T_LOADC = 1
T_EXT = 255

TAPE_BUILTINS: tuple[str, ...] = tuple(OPERATORS)
TAPE_OPCODE: dict[str, int] = {name: 2 + i for i, name in enumerate(TAPE_BUILTINS)}

# condition kinds for rule guards
COND_POSITIVE = 0
COND_NONNEG = 1
COND_NONZERO = 2
COND_KINDS = {"positive": COND_POSITIVE, "nonneg": COND_NONNEG, "nonzero": COND_NONZERO}
