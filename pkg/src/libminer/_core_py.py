"""Pure-Python fallback for the compiled core.

Implements the same two hot kernels as the Cython extension: batched
binary64 tape evaluation (vectorized with numpy) and the e-graph engine
(match, apply, rebuild, representative extraction).  The algorithms and
iteration orders mirror the compiled module exactly so either backend
produces identical search results.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .coredefs import EG_FIRST_OP, EG_LIT, EG_VAR, T_EXT, T_LOADC, T_LOADV, TAPE_BUILTINS

COMPILED = False

# ---------------------------------------------------------------------------
# tape evaluation

_SPLITTER = 134217729.0  # 2**27 + 1, Dekker splitting constant


def _fma_vec(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    # Fused multiply-add via an exact Dekker product plus compensated
    # summation.  Falls back to the unfused form where the split overflows.
    t = a * _SPLITTER
    ahi = t - (t - a)
    alo = a - ahi
    t = b * _SPLITTER
    bhi = t - (t - b)
    blo = b - bhi
    p = a * b
    e = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    s = p + c
    bv = s - p
    err = (p - (s - bv)) + (c - bv)
    fused = s + (err + e)
    bad = ~np.isfinite(ahi) | ~np.isfinite(bhi) | ~np.isfinite(p)
    return np.where(bad, p + c, fused)


def _pow_vec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.power on float64 follows C pow for the special cases we rely on
    # (pow(0,0)=1, negative base with non-integer exponent -> nan).
    return np.power(a, b)


_VEC_OPS: dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "neg": np.negative,
    "fabs": np.fabs,
    "sqrt": np.sqrt,
    "cbrt": np.cbrt,
    "fma": _fma_vec,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "asin": np.arcsin,
    "acos": np.arccos,
    "atan": np.arctan,
    "atan2": np.arctan2,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "atanh": np.arctanh,
    "exp": np.exp,
    "expm1": np.expm1,
    "log": np.log,
    "log1p": np.log1p,
    "pow": _pow_vec,
    "hypot": np.hypot,
}

_OPCODE_FN: list[Callable] = [_VEC_OPS[name] for name in TAPE_BUILTINS]
_OPCODE_ARITY: list[int] = [
    {"+": 2, "-": 2, "*": 2, "/": 2, "atan2": 2, "pow": 2, "hypot": 2, "fma": 3}.get(n, 1)
    for n in TAPE_BUILTINS
]


def eval_tape(
    code: np.ndarray,
    consts: np.ndarray,
    xs: np.ndarray,
    ext_specs: Sequence[tuple[int, Callable[..., float]]],
) -> np.ndarray:
    """Evaluate one compiled tape over a batch of points.

    code:  (n_instr, 2) int32, rows of (opcode, operand)
    consts: float64 constant pool
    xs:    (n_points, n_vars) float64 inputs
    ext_specs: (arity, fn) per extension op; fn maps scalars to a float
    """
    npts = xs.shape[0]
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for opcode, operand in code:
            if opcode == T_LOADV:
                stack.append(xs[:, operand].copy())
            elif opcode == T_LOADC:
                stack.append(np.full(npts, consts[operand]))
            elif opcode == T_EXT:
                arity, fn = ext_specs[operand]
                args = stack[len(stack) - arity :]
                del stack[len(stack) - arity :]
                out = np.empty(npts)
                cols = [np.asarray(a) for a in args]
                for i in range(npts):
                    out[i] = fn(*(float(col[i]) for col in cols))
                stack.append(out)
            else:
                fn = _OPCODE_FN[opcode - 2]
                arity = _OPCODE_ARITY[opcode - 2]
                args = stack[len(stack) - arity :]
                del stack[len(stack) - arity :]
                stack.append(np.asarray(fn(*args), dtype=np.float64))
    if len(stack) != 1:
        raise ValueError("malformed tape")
    return stack[0]


# ---------------------------------------------------------------------------
# e-graph engine

class EGraphCore:
    """Equality-saturation engine over (op, a, b, c) integer nodes.

    Leaves (op < 2) carry a payload in slot a; other slots hold child
    e-class ids with -1 unused.  Class ids are dense ints; lower ids are
    kept as union-find representatives so iteration order is stable.
    """

    def __init__(self) -> None:
        self.parent: list[int] = []
        self.memo: dict[tuple[int, int, int, int], int] = {}
        self.classes: dict[int, list[tuple[int, int, int, int]]] = {}

    # -- union-find --

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def _union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return ra

    # -- construction --

    def _canon(self, op: int, a: int, b: int, c: int) -> tuple[int, int, int, int]:
        if op >= EG_FIRST_OP:
            if a >= 0:
                a = self.find(a)
            if b >= 0:
                b = self.find(b)
            if c >= 0:
                c = self.find(c)
        return (op, a, b, c)

    def add_node(self, op: int, a: int = -1, b: int = -1, c: int = -1) -> int:
        key = self._canon(op, a, b, c)
        cid = self.memo.get(key)
        if cid is not None:
            return self.find(cid)
        cid = len(self.parent)
        self.parent.append(cid)
        self.memo[key] = cid
        self.classes[cid] = [key]
        return cid

    def lookup(self, op: int, a: int = -1, b: int = -1, c: int = -1) -> int:
        cid = self.memo.get(self._canon(op, a, b, c))
        return -1 if cid is None else self.find(cid)

    def merge(self, a: int, b: int) -> int:
        return self._union(a, b)

    def n_nodes(self) -> int:
        return len(self.memo)

    def n_classes(self) -> int:
        return len(self.classes)

    def generation(self) -> tuple[int, int]:
        return (len(self.parent), len(self.memo))

    def class_nodes(self, cid: int) -> list[tuple[int, int, int, int]]:
        return self.classes.get(self.find(cid), [])

    def iter_classes(self) -> list[int]:
        return sorted(self.classes)

    def rebuild(self) -> None:
        """Restore congruence: re-canonicalize every node, merging classes
        whose nodes collide, until a fixed point."""
        while True:
            changed = False
            new_memo: dict[tuple[int, int, int, int], int] = {}
            for key, cid in self.memo.items():
                nkey = self._canon(*key)
                ncid = self.find(cid)
                prev = new_memo.get(nkey)
                if prev is None:
                    new_memo[nkey] = ncid
                elif self.find(prev) != ncid:
                    new_memo[nkey] = self._union(prev, ncid)
                    changed = True
            self.memo = new_memo
            if not changed:
                break
        classes: dict[int, list[tuple[int, int, int, int]]] = {}
        for key, cid in self.memo.items():
            ncid = self.find(cid)
            self.memo[key] = ncid
            classes.setdefault(ncid, []).append(key)
        self.classes = classes

    # -- matching --

    def _match_into(
        self,
        pat: list[tuple[int, int, int, int]],
        pidx: int,
        cid: int,
        env: list[int],
        out: list[tuple[int, ...]],
        lit_cache: dict[int, int],
    ) -> None:
        """Append every environment matching pattern node pidx at class cid."""
        op, r1, r2, r3 = pat[pidx]
        if op < EG_FIRST_OP:
            lit = lit_cache.get(pidx, -2)
            if lit == -2:
                lit = self.lookup(op, r1)
                lit_cache[pidx] = lit
            if lit >= 0 and self.find(lit) == cid:
                out.append(tuple(env))
            return
        for node in self.classes.get(cid, ()):
            if node[0] != op:
                continue
            self._match_children(pat, (r1, r2, r3), node, 1, env, out, lit_cache)

    def _match_children(
        self,
        pat: list[tuple[int, int, int, int]],
        refs: tuple[int, int, int],
        node: tuple[int, int, int, int],
        slot: int,
        env: list[int],
        out: list[tuple[int, ...]],
        lit_cache: dict[int, int],
    ) -> None:
        if slot == 4 or refs[slot - 1] == -1:
            out.append(tuple(env))
            return
        ref = refs[slot - 1]
        child = self.find(node[slot])
        if ref <= -2:
            v = -ref - 2
            bound = env[v]
            if bound == -1:
                env[v] = child
                self._match_children(pat, refs, node, slot + 1, env, out, lit_cache)
                env[v] = -1
            elif bound == child:
                self._match_children(pat, refs, node, slot + 1, env, out, lit_cache)
            return
        sub: list[tuple[int, ...]] = []
        self._match_into(pat, ref, child, env, sub, lit_cache)
        for senv in sub:
            saved = env[:]
            env[:] = list(senv)
            self._match_children(pat, refs, node, slot + 1, env, out, lit_cache)
            env[:] = saved

    def _instantiate(self, pat: list[tuple[int, int, int, int]], ref: int, env: tuple[int, ...]) -> int:
        if ref <= -2:
            return env[-ref - 2]
        op, r1, r2, r3 = pat[ref]
        if op < EG_FIRST_OP:
            return self.add_node(op, r1)
        a = self._instantiate(pat, r1, env) if r1 != -1 else -1
        b = self._instantiate(pat, r2, env) if r2 != -1 else -1
        c = self._instantiate(pat, r3, env) if r3 != -1 else -1
        return self.add_node(op, a, b, c)

    # -- saturation --

    def run(
        self,
        rules: Sequence[tuple],
        max_iters: int,
        max_nodes: int,
        guard: Callable[[int, tuple[int, ...]], bool] | None,
    ) -> dict:
        """Run match-then-apply iterations.

        Each rule is (n_vars, lhs_pat, lhs_root, rhs_pat, rhs_root, cond_id)
        with cond_id -1 for unconditional rules.  Returns run statistics.
        """
        stats = {"iters": 0, "hit_node_limit": False, "fixpoint": False}
        for _ in range(max_iters):
            if len(self.memo) >= max_nodes:
                stats["hit_node_limit"] = True
                break
            class_list = list(self.classes.items())
            # index classes by the ops their nodes carry
            by_op: dict[int, list[int]] = {}
            for cid, nodes in class_list:
                seen: set[int] = set()
                for node in nodes:
                    if node[0] not in seen:
                        seen.add(node[0])
                        by_op.setdefault(node[0], []).append(cid)
            matches: list[tuple[int, int, tuple[int, ...]]] = []
            for ri, (n_vars, lhs, lhs_root, _rhs, _rhs_root, _cond) in enumerate(rules):
                lit_cache: dict[int, int] = {}
                envs: list[tuple[int, ...]] = []
                if lhs_root <= -2:
                    v = -lhs_root - 2
                    for cid, _nodes in class_list:
                        env = [-1] * n_vars
                        env[v] = cid
                        matches.append((ri, cid, tuple(env)))
                    continue
                root_op = lhs[lhs_root][0]
                if root_op < EG_FIRST_OP:
                    continue
                for cid in by_op.get(root_op, ()):
                    envs.clear()
                    self._match_into(lhs, lhs_root, cid, [-1] * n_vars, envs, lit_cache)
                    for env in envs:
                        matches.append((ri, cid, env))
            before_nodes = len(self.memo)
            before_parent = len(self.parent)
            merged_any = False
            for ri, cid, env in matches:
                if len(self.memo) >= max_nodes:
                    stats["hit_node_limit"] = True
                    break
                rule = rules[ri]
                cond = rule[5]
                if cond >= 0 and guard is not None and not guard(cond, env):
                    continue
                rhs_cid = self._instantiate(rule[3], rule[4], env)
                a, b = self.find(cid), self.find(rhs_cid)
                if a != b:
                    self._union(a, b)
                    merged_any = True
            self.rebuild()
            stats["iters"] += 1
            if (
                not merged_any
                and len(self.memo) == before_nodes
                and len(self.parent) == before_parent
            ):
                stats["fixpoint"] = True
                break
            if stats["hit_node_limit"]:
                break
        stats["nodes"] = len(self.memo)
        stats["classes"] = len(self.classes)
        return stats

    # -- extraction --

    def extract_reps(
        self, op_costs: Sequence[float], leaf_cost: float, budget: int = 3
    ) -> dict[int, list[tuple[float, tuple[int, int, int, int], tuple[int, int, int]]]]:
        """Cheapest representative terms per class, up to `budget` alternates.

        Returns class -> sorted list of (cost, node, child_rep_slots).
        Slot -1 marks an unused child position.
        """
        reps: dict[int, list[tuple[float, tuple[int, int, int, int], tuple[int, int, int]]]] = {
            cid: [] for cid in self.classes
        }
        node_list = [(cid, node) for cid in sorted(self.classes) for node in self.classes[cid]]
        for _ in range(200):
            changed = False
            for cid, node in node_list:
                op, a, b, c = node
                if op < EG_FIRST_OP:
                    combos: list[tuple[float, tuple[int, int, int, int]]] = [
                        (leaf_cost, (-1, -1, -1))
                    ]
                else:
                    base = op_costs[op]
                    combos = [(base, (-1, -1, -1))]
                    for slot, child in enumerate((a, b, c)):
                        if child == -1:
                            continue
                        crs = reps[self.find(child)]
                        if not crs:
                            combos = []
                            break
                        new: list[tuple[float, tuple[int, int, int, int]]] = []
                        for cost, sel in combos:
                            for k, (ccost, _n, _s) in enumerate(crs):
                                nsel = list(sel)
                                nsel[slot] = k
                                new.append((cost + ccost, tuple(nsel)))
                        combos = new
                if not combos:
                    continue
                lst = reps[cid]
                updated = False
                for cost, sel in combos:
                    for i, (ocost, onode, osel) in enumerate(lst):
                        if onode == node and osel == sel:
                            if ocost != cost:
                                lst[i] = (cost, node, sel)
                                updated = True
                            break
                    else:
                        if len(lst) < budget or cost < lst[-1][0]:
                            lst.append((cost, node, sel))
                            updated = True
                if updated:
                    lst.sort(key=lambda r: (r[0], r[1], r[2]))
                    del lst[budget:]
                    changed = True
            if not changed:
                break
        return reps
