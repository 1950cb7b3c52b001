# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core: batched tape evaluation and the e-graph engine.

Mirrors _core_py step for step -- same insertion orders, same tie-breaking,
same truncation points -- so either backend produces identical search
results.  Only the arithmetic differs: tapes run against C libm here
instead of numpy ufuncs, which can disagree by an ulp on transcendentals.
"""

from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset
from libc cimport math as cm

import numpy as np

from .coredefs import EG_FIRST_OP, EG_LIT, EG_VAR, T_EXT, T_LOADC, T_LOADV, TAPE_BUILTINS

COMPILED = True

cdef enum:
    FIRST_OP = 2
    MAXV = 8          # pattern variables per rule
    MAXC = 27         # rep combos per node (3 children x 3 alternates)
    ID_BITS = 18
    ID_LIMIT = (1 << ID_BITS) - 2
    OP_LIMIT = 511
    MROW = 2 + MAXV   # match row: (rule, class, env...)

assert EG_VAR == 0 and EG_LIT == 1 and EG_FIRST_OP == FIRST_OP

# ---------------------------------------------------------------------------
# tape evaluation

_CASE_BY_NAME = {
    "+": 0, "-": 1, "*": 2, "/": 3, "neg": 4, "fabs": 5, "sqrt": 6,
    "cbrt": 7, "fma": 8, "sin": 9, "cos": 10, "tan": 11, "asin": 12,
    "acos": 13, "atan": 14, "atan2": 15, "sinh": 16, "cosh": 17,
    "tanh": 18, "atanh": 19, "exp": 20, "expm1": 21, "log": 22,
    "log1p": 23, "pow": 24, "hypot": 25,
}
_ARITY_BY_CASE = (2, 2, 2, 2, 1, 1, 1, 1, 3, 1, 1, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2)

cdef int _case_of[32]
cdef int _arity_of[32]
for _i, _name in enumerate(TAPE_BUILTINS):
    _case_of[_i] = _CASE_BY_NAME[_name]
    _arity_of[_i] = _ARITY_BY_CASE[_CASE_BY_NAME[_name]]


def eval_tape(code, consts, xs, ext_specs):
    """Evaluate one compiled tape over a batch of points.

    code:  (n_instr, 2) int32, rows of (opcode, operand)
    consts: float64 constant pool
    xs:    (n_points, n_vars) float64 inputs
    ext_specs: (arity, fn) per extension op; fn maps scalars to a float
    """
    cdef const int[:, ::1] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[::1] cp = np.ascontiguousarray(
        np.asarray(consts, dtype=np.float64).reshape(-1)
    )
    cdef const double[:, ::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef Py_ssize_t n_instr = c.shape[0]
    cdef Py_ssize_t npts = x.shape[0]
    cdef Py_ssize_t i, j
    cdef int opcode, operand, depth, max_depth, ar, case

    max_depth = 0
    depth = 0
    for i in range(n_instr):
        opcode = c[i, 0]
        if opcode == T_LOADV or opcode == T_LOADC:
            depth += 1
        elif opcode == T_EXT:
            depth += 1 - <int> ext_specs[c[i, 1]][0]
        else:
            depth += 1 - _arity_of[opcode - FIRST_OP]
        if depth > max_depth:
            max_depth = depth
    if depth != 1:
        raise ValueError("malformed tape")

    buf = np.empty((max_depth, npts), dtype=np.float64)
    cdef double[:, ::1] st = buf
    cdef double a
    cdef int sp = 0
    for i in range(n_instr):
        opcode = c[i, 0]
        operand = c[i, 1]
        if opcode == T_LOADV:
            for j in range(npts):
                st[sp, j] = x[j, operand]
            sp += 1
        elif opcode == T_LOADC:
            a = cp[operand]
            for j in range(npts):
                st[sp, j] = a
            sp += 1
        elif opcode == T_EXT:
            ar = <int> ext_specs[operand][0]
            fn = ext_specs[operand][1]
            sp -= ar
            if ar == 1:
                for j in range(npts):
                    st[sp, j] = <double> fn(st[sp, j])
            elif ar == 2:
                for j in range(npts):
                    st[sp, j] = <double> fn(st[sp, j], st[sp + 1, j])
            else:
                for j in range(npts):
                    st[sp, j] = <double> fn(st[sp, j], st[sp + 1, j], st[sp + 2, j])
            sp += 1
        else:
            case = _case_of[opcode - FIRST_OP]
            ar = _arity_of[opcode - FIRST_OP]
            sp -= ar
            if case == 0:
                for j in range(npts):
                    st[sp, j] = st[sp, j] + st[sp + 1, j]
            elif case == 1:
                for j in range(npts):
                    st[sp, j] = st[sp, j] - st[sp + 1, j]
            elif case == 2:
                for j in range(npts):
                    st[sp, j] = st[sp, j] * st[sp + 1, j]
            elif case == 3:
                for j in range(npts):
                    st[sp, j] = st[sp, j] / st[sp + 1, j]
            elif case == 4:
                for j in range(npts):
                    st[sp, j] = -st[sp, j]
            elif case == 5:
                for j in range(npts):
                    st[sp, j] = cm.fabs(st[sp, j])
            elif case == 6:
                for j in range(npts):
                    st[sp, j] = cm.sqrt(st[sp, j])
            elif case == 7:
                for j in range(npts):
                    st[sp, j] = cm.cbrt(st[sp, j])
            elif case == 8:
                for j in range(npts):
                    st[sp, j] = cm.fma(st[sp, j], st[sp + 1, j], st[sp + 2, j])
            elif case == 9:
                for j in range(npts):
                    st[sp, j] = cm.sin(st[sp, j])
            elif case == 10:
                for j in range(npts):
                    st[sp, j] = cm.cos(st[sp, j])
            elif case == 11:
                for j in range(npts):
                    st[sp, j] = cm.tan(st[sp, j])
            elif case == 12:
                for j in range(npts):
                    st[sp, j] = cm.asin(st[sp, j])
            elif case == 13:
                for j in range(npts):
                    st[sp, j] = cm.acos(st[sp, j])
            elif case == 14:
                for j in range(npts):
                    st[sp, j] = cm.atan(st[sp, j])
            elif case == 15:
                for j in range(npts):
                    st[sp, j] = cm.atan2(st[sp, j], st[sp + 1, j])
            elif case == 16:
                for j in range(npts):
                    st[sp, j] = cm.sinh(st[sp, j])
            elif case == 17:
                for j in range(npts):
                    st[sp, j] = cm.cosh(st[sp, j])
            elif case == 18:
                for j in range(npts):
                    st[sp, j] = cm.tanh(st[sp, j])
            elif case == 19:
                for j in range(npts):
                    st[sp, j] = cm.atanh(st[sp, j])
            elif case == 20:
                for j in range(npts):
                    st[sp, j] = cm.exp(st[sp, j])
            elif case == 21:
                for j in range(npts):
                    st[sp, j] = cm.expm1(st[sp, j])
            elif case == 22:
                for j in range(npts):
                    st[sp, j] = cm.log(st[sp, j])
            elif case == 23:
                for j in range(npts):
                    st[sp, j] = cm.log1p(st[sp, j])
            elif case == 24:
                for j in range(npts):
                    st[sp, j] = cm.pow(st[sp, j], st[sp + 1, j])
            else:
                for j in range(npts):
                    st[sp, j] = cm.hypot(st[sp, j], st[sp + 1, j])
            sp += 1
    return buf[0].copy()


# ---------------------------------------------------------------------------
# e-graph engine

cdef inline long long _pack(int op, int a, int b, int c):
    return (
        (<long long> op << (3 * ID_BITS))
        | (<long long> (a + 1) << (2 * ID_BITS))
        | (<long long> (b + 1) << ID_BITS)
        | <long long> (c + 1)
    )


cdef inline unsigned long long _mix(unsigned long long z):
    z += <unsigned long long> 0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * <unsigned long long> 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <unsigned long long> 0x94D049BB133111EB
    return z ^ (z >> 31)


cdef struct Matches:
    int* rows
    Py_ssize_t count
    Py_ssize_t cap


cdef int _m_push(Matches* m, int ri, int cid, int* env, int nv) except -1:
    cdef int k
    if m.count == m.cap:
        m.cap = m.cap * 2 if m.cap else 1024
        m.rows = <int*> realloc(m.rows, m.cap * MROW * sizeof(int))
        if m.rows == NULL:
            raise MemoryError()
    cdef int* row = m.rows + m.count * MROW
    row[0] = ri
    row[1] = cid
    for k in range(nv):
        row[2 + k] = env[k]
    for k in range(nv, MAXV):
        row[2 + k] = -1
    m.count += 1
    return 0


cdef class EGraphCore:
    """Equality-saturation engine over (op, a, b, c) integer nodes.

    Leaves (op < 2) carry a payload in slot a; other slots hold child
    e-class ids with -1 unused.  Class ids are dense ints; lower ids are
    kept as union-find representatives so iteration order is stable.
    """

    cdef int* parent
    cdef Py_ssize_t n_ids, id_cap
    # insertion-ordered node table plus a hash index over it
    cdef long long* mkeys
    cdef int* mvals
    cdef Py_ssize_t m_count, m_cap
    cdef int* htab          # slot -> index into mkeys, -1 empty
    cdef Py_ssize_t h_cap
    cdef unsigned long long h_mask
    # classes, valid after the last rebuild: CSR over flattened nodes
    cdef int* cls_ids
    cdef int* cls_start
    cdef Py_ssize_t n_cls
    cdef int* fop
    cdef int* fa
    cdef int* fb
    cdef int* fc
    cdef int* cid_to_ci     # -1 when not a rebuilt class root
    cdef dict extra         # cid -> [(op,a,b,c)] for nodes added since

    def __cinit__(self):
        self.id_cap = 1024
        self.parent = <int*> malloc(self.id_cap * sizeof(int))
        self.cid_to_ci = <int*> malloc(self.id_cap * sizeof(int))
        self.n_ids = 0
        self.m_cap = 1024
        self.mkeys = <long long*> malloc(self.m_cap * sizeof(long long))
        self.mvals = <int*> malloc(self.m_cap * sizeof(int))
        self.m_count = 0
        self.h_cap = 4096
        self.h_mask = self.h_cap - 1
        self.htab = <int*> malloc(self.h_cap * sizeof(int))
        self.cls_ids = NULL
        self.cls_start = NULL
        self.fop = NULL
        self.fa = NULL
        self.fb = NULL
        self.fc = NULL
        self.n_cls = 0
        if (
            self.parent == NULL or self.cid_to_ci == NULL or self.mkeys == NULL
            or self.mvals == NULL or self.htab == NULL
        ):
            raise MemoryError()
        memset(self.htab, 0xFF, self.h_cap * sizeof(int))
        memset(self.cid_to_ci, 0xFF, self.id_cap * sizeof(int))
        self.extra = {}

    def __dealloc__(self):
        free(self.parent)
        free(self.cid_to_ci)
        free(self.mkeys)
        free(self.mvals)
        free(self.htab)
        free(self.cls_ids)
        free(self.cls_start)
        free(self.fop)
        free(self.fa)
        free(self.fb)
        free(self.fc)

    # -- union-find --

    cdef int _find(self, int x):
        cdef int root = x
        cdef int nxt
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            nxt = self.parent[x]
            self.parent[x] = root
            x = nxt
        return root

    def find(self, int x):
        return self._find(x)

    cdef int _union_c(self, int a, int b):
        cdef int ra = self._find(a)
        cdef int rb = self._find(b)
        cdef int t
        if ra == rb:
            return ra
        if rb < ra:
            t = ra
            ra = rb
            rb = t
        self.parent[rb] = ra
        return ra

    def merge(self, int a, int b):
        return self._union_c(a, b)

    # -- hash index --

    cdef int _h_grow(self) except -1:
        cdef Py_ssize_t ncap = self.h_cap * 2
        cdef int* nt = <int*> malloc(ncap * sizeof(int))
        if nt == NULL:
            raise MemoryError()
        memset(nt, 0xFF, ncap * sizeof(int))
        cdef unsigned long long nmask = ncap - 1
        cdef Py_ssize_t i
        cdef unsigned long long slot
        for i in range(self.m_count):
            slot = _mix(<unsigned long long> self.mkeys[i]) & nmask
            while nt[slot] != -1:
                slot = (slot + 1) & nmask
            nt[slot] = <int> i
        free(self.htab)
        self.htab = nt
        self.h_cap = ncap
        self.h_mask = nmask
        return 0

    cdef Py_ssize_t _h_find(self, long long key):
        """Slot index when key is present; -(free slot)-1 when absent."""
        cdef unsigned long long slot = _mix(<unsigned long long> key) & self.h_mask
        cdef int idx
        while True:
            idx = self.htab[slot]
            if idx == -1:
                return -(<Py_ssize_t> slot) - 1
            if self.mkeys[idx] == key:
                return <Py_ssize_t> slot
            slot = (slot + 1) & self.h_mask

    cdef int _m_append(self, long long key, int cid, Py_ssize_t slot) except -1:
        if self.m_count == self.m_cap:
            self.m_cap *= 2
            self.mkeys = <long long*> realloc(self.mkeys, self.m_cap * sizeof(long long))
            self.mvals = <int*> realloc(self.mvals, self.m_cap * sizeof(int))
            if self.mkeys == NULL or self.mvals == NULL:
                raise MemoryError()
        self.mkeys[self.m_count] = key
        self.mvals[self.m_count] = cid
        self.htab[slot] = <int> self.m_count
        self.m_count += 1
        if self.m_count * 3 > self.h_cap * 2:
            self._h_grow()
        return 0

    # -- construction --

    cdef long long _canon_key(self, int op, int a, int b, int c) except -1:
        if op >= FIRST_OP:
            if a >= 0:
                a = self._find(a)
            if b >= 0:
                b = self._find(b)
            if c >= 0:
                c = self._find(c)
        if op > OP_LIMIT:
            raise OverflowError("operator id out of range")
        if a > ID_LIMIT or b > ID_LIMIT or c > ID_LIMIT:
            raise OverflowError("e-graph id out of range")
        return _pack(op, a, b, c)

    cdef tuple _unpack(self, long long key):
        cdef int op = <int> (key >> (3 * ID_BITS))
        cdef int a = <int> ((key >> (2 * ID_BITS)) & ((1 << ID_BITS) - 1)) - 1
        cdef int b = <int> ((key >> ID_BITS) & ((1 << ID_BITS) - 1)) - 1
        cdef int c = <int> (key & ((1 << ID_BITS) - 1)) - 1
        return (op, a, b, c)

    cdef int _add_node_c(self, int op, int a, int b, int c) except -1:
        cdef long long key = self._canon_key(op, a, b, c)
        cdef Py_ssize_t slot = self._h_find(key)
        cdef int cid
        if slot >= 0:
            return self._find(self.mvals[self.htab[slot]])
        slot = -slot - 1
        cid = <int> self.n_ids
        if self.n_ids == self.id_cap:
            self.id_cap *= 2
            self.parent = <int*> realloc(self.parent, self.id_cap * sizeof(int))
            self.cid_to_ci = <int*> realloc(self.cid_to_ci, self.id_cap * sizeof(int))
            if self.parent == NULL or self.cid_to_ci == NULL:
                raise MemoryError()
            memset(self.cid_to_ci + self.n_ids, 0xFF,
                   (self.id_cap - self.n_ids) * sizeof(int))
        self.parent[cid] = cid
        self.cid_to_ci[cid] = -1
        self.n_ids += 1
        self._m_append(key, cid, slot)
        self.extra[cid] = [self._unpack(key)]
        return cid

    def add_node(self, int op, int a=-1, int b=-1, int c=-1):
        return self._add_node_c(op, a, b, c)

    cdef int _lookup_c(self, int op, int a, int b, int c) except -2:
        cdef long long key = self._canon_key(op, a, b, c)
        cdef Py_ssize_t slot = self._h_find(key)
        if slot < 0:
            return -1
        return self._find(self.mvals[self.htab[slot]])

    def lookup(self, int op, int a=-1, int b=-1, int c=-1):
        return self._lookup_c(op, a, b, c)

    def n_nodes(self):
        return self.m_count

    def n_classes(self):
        return self.n_cls + len(self.extra)

    def generation(self):
        return (self.n_ids, self.m_count)

    def class_nodes(self, int cid):
        cdef int root = self._find(cid)
        got = self.extra.get(root)
        if got is not None:
            return list(got)
        cdef int ci = self.cid_to_ci[root]
        if ci < 0:
            return []
        out = []
        cdef Py_ssize_t i
        for i in range(self.cls_start[ci], self.cls_start[ci + 1]):
            out.append((self.fop[i], self.fa[i], self.fb[i], self.fc[i]))
        return out

    def iter_classes(self):
        cdef Py_ssize_t i
        ids = []
        for i in range(self.n_cls):
            ids.append(self.cls_ids[i])
        ids.extend(self.extra.keys())
        ids.sort()
        return ids

    # -- rebuild --

    def rebuild(self):
        self._rebuild_c()

    cdef Py_ssize_t _probe_tmp(self, long long* keys, long long key):
        cdef unsigned long long slot = _mix(<unsigned long long> key) & self.h_mask
        cdef int idx
        while True:
            idx = self.htab[slot]
            if idx == -1 or keys[idx] == key:
                return <Py_ssize_t> slot
            slot = (slot + 1) & self.h_mask

    cdef int _rebuild_c(self) except -1:
        """Restore congruence: re-canonicalize every node, merging classes
        whose nodes collide, until a fixed point."""
        cdef bint changed = True
        cdef Py_ssize_t i, slot
        cdef long long key, nkey
        cdef int op, a, b, c, cid, prev
        cdef long long* nkeys
        cdef int* nvals
        cdef Py_ssize_t ncount
        while changed:
            changed = False
            nkeys = <long long*> malloc(self.m_cap * sizeof(long long))
            nvals = <int*> malloc(self.m_cap * sizeof(int))
            if nkeys == NULL or nvals == NULL:
                free(nkeys)
                free(nvals)
                raise MemoryError()
            ncount = 0
            memset(self.htab, 0xFF, self.h_cap * sizeof(int))
            for i in range(self.m_count):
                key = self.mkeys[i]
                op = <int> (key >> (3 * ID_BITS))
                a = <int> ((key >> (2 * ID_BITS)) & ((1 << ID_BITS) - 1)) - 1
                b = <int> ((key >> ID_BITS) & ((1 << ID_BITS) - 1)) - 1
                c = <int> (key & ((1 << ID_BITS) - 1)) - 1
                if op >= FIRST_OP:
                    if a >= 0:
                        a = self._find(a)
                    if b >= 0:
                        b = self._find(b)
                    if c >= 0:
                        c = self._find(c)
                nkey = _pack(op, a, b, c)
                cid = self._find(self.mvals[i])
                slot = self._probe_tmp(nkeys, nkey)
                if self.htab[slot] == -1:
                    nkeys[ncount] = nkey
                    nvals[ncount] = cid
                    self.htab[slot] = <int> ncount
                    ncount += 1
                else:
                    prev = nvals[self.htab[slot]]
                    if self._find(prev) != cid:
                        nvals[self.htab[slot]] = self._union_c(prev, cid)
                        changed = True
            free(self.mkeys)
            free(self.mvals)
            self.mkeys = nkeys
            self.mvals = nvals
            self.m_count = ncount
        for i in range(self.m_count):
            self.mvals[i] = self._find(self.mvals[i])
        self._rebuild_classes()
        return 0

    cdef int _rebuild_classes(self) except -1:
        cdef Py_ssize_t i
        cdef int cid, ci
        cdef long long key
        free(self.cls_ids)
        free(self.cls_start)
        free(self.fop)
        free(self.fa)
        free(self.fb)
        free(self.fc)
        self.cls_ids = NULL
        self.cls_start = NULL
        self.fop = NULL
        self.fa = NULL
        self.fb = NULL
        self.fc = NULL
        memset(self.cid_to_ci, 0xFF, self.id_cap * sizeof(int))
        self.cls_ids = <int*> malloc((self.m_count + 1) * sizeof(int))
        self.cls_start = <int*> malloc((self.m_count + 2) * sizeof(int))
        self.fop = <int*> malloc((self.m_count + 1) * sizeof(int))
        self.fa = <int*> malloc((self.m_count + 1) * sizeof(int))
        self.fb = <int*> malloc((self.m_count + 1) * sizeof(int))
        self.fc = <int*> malloc((self.m_count + 1) * sizeof(int))
        cdef int* counts = <int*> malloc((self.m_count + 1) * sizeof(int))
        if (
            self.cls_ids == NULL or self.cls_start == NULL or self.fop == NULL
            or self.fa == NULL or self.fb == NULL or self.fc == NULL
            or counts == NULL
        ):
            free(counts)
            raise MemoryError()
        # class order = first appearance in node-table order
        self.n_cls = 0
        for i in range(self.m_count):
            cid = self.mvals[i]
            if self.cid_to_ci[cid] == -1:
                self.cid_to_ci[cid] = <int> self.n_cls
                self.cls_ids[self.n_cls] = cid
                counts[self.n_cls] = 0
                self.n_cls += 1
            counts[self.cid_to_ci[cid]] += 1
        self.cls_start[0] = 0
        for i in range(self.n_cls):
            self.cls_start[i + 1] = self.cls_start[i] + counts[i]
            counts[i] = self.cls_start[i]
        for i in range(self.m_count):
            ci = self.cid_to_ci[self.mvals[i]]
            key = self.mkeys[i]
            self.fop[counts[ci]] = <int> (key >> (3 * ID_BITS))
            self.fa[counts[ci]] = <int> ((key >> (2 * ID_BITS)) & ((1 << ID_BITS) - 1)) - 1
            self.fb[counts[ci]] = <int> ((key >> ID_BITS) & ((1 << ID_BITS) - 1)) - 1
            self.fc[counts[ci]] = <int> (key & ((1 << ID_BITS) - 1)) - 1
            counts[ci] += 1
        free(counts)
        self.extra = {}
        return 0

    # -- matching --

    cdef int _match_into(
        self,
        int* pop, int* pr1, int* pr2, int* pr3,
        int pidx, int cid, int* env, int nv,
        Matches* out, int ri, int* lit_cache,
    ) except -1:
        """Append every environment matching pattern node pidx at class cid."""
        cdef int op = pop[pidx]
        cdef int lit, ci
        cdef Py_ssize_t i
        if op < FIRST_OP:
            lit = lit_cache[pidx]
            if lit == -2:
                lit = self._lookup_c(op, pr1[pidx], -1, -1)
                lit_cache[pidx] = lit
            if lit >= 0 and self._find(lit) == cid:
                _m_push(out, ri, cid, env, nv)
            return 0
        ci = self.cid_to_ci[cid]
        if ci < 0:
            return 0
        for i in range(self.cls_start[ci], self.cls_start[ci + 1]):
            if self.fop[i] != op:
                continue
            self._match_children(
                pop, pr1, pr2, pr3, pidx, <int> i, 1, cid, env, nv, out, ri, lit_cache
            )
        return 0

    cdef int _match_children(
        self,
        int* pop, int* pr1, int* pr2, int* pr3,
        int pidx, int ni, int slot, int out_cid, int* env, int nv,
        Matches* out, int ri, int* lit_cache,
    ) except -1:
        cdef int ref, child, v, bound, k
        cdef Py_ssize_t s
        cdef int saved[MAXV]
        cdef Matches sub
        if slot == 1:
            ref = pr1[pidx]
        elif slot == 2:
            ref = pr2[pidx]
        elif slot == 3:
            ref = pr3[pidx]
        else:
            ref = -1
        if slot == 4 or ref == -1:
            _m_push(out, ri, out_cid, env, nv)
            return 0
        if slot == 1:
            child = self.fa[ni]
        elif slot == 2:
            child = self.fb[ni]
        else:
            child = self.fc[ni]
        child = self._find(child)
        if ref <= -2:
            v = -ref - 2
            bound = env[v]
            if bound == -1:
                env[v] = child
                self._match_children(
                    pop, pr1, pr2, pr3, pidx, ni, slot + 1, out_cid, env, nv, out, ri, lit_cache
                )
                env[v] = -1
            elif bound == child:
                self._match_children(
                    pop, pr1, pr2, pr3, pidx, ni, slot + 1, out_cid, env, nv, out, ri, lit_cache
                )
            return 0
        # subpattern: collect its environments, then continue per environment
        sub.rows = NULL
        sub.count = 0
        sub.cap = 0
        try:
            self._match_into(pop, pr1, pr2, pr3, ref, child, env, nv, &sub, ri, lit_cache)
            for k in range(nv):
                saved[k] = env[k]
            for s in range(sub.count):
                for k in range(nv):
                    env[k] = sub.rows[s * MROW + 2 + k]
                self._match_children(
                    pop, pr1, pr2, pr3, pidx, ni, slot + 1, out_cid, env, nv, out, ri, lit_cache
                )
                for k in range(nv):
                    env[k] = saved[k]
        finally:
            free(sub.rows)
        return 0

    cdef int _instantiate(
        self, int* pop, int* pr1, int* pr2, int* pr3, int ref, int* env
    ) except -1:
        if ref <= -2:
            return env[-ref - 2]
        cdef int op = pop[ref]
        cdef int a, b, c
        if op < FIRST_OP:
            return self._add_node_c(op, pr1[ref], -1, -1)
        a = self._instantiate(pop, pr1, pr2, pr3, pr1[ref], env) if pr1[ref] != -1 else -1
        b = self._instantiate(pop, pr1, pr2, pr3, pr2[ref], env) if pr2[ref] != -1 else -1
        c = self._instantiate(pop, pr1, pr2, pr3, pr3[ref], env) if pr3[ref] != -1 else -1
        return self._add_node_c(op, a, b, c)

    # -- saturation --

    def run(self, rules, int max_iters, int max_nodes, guard):
        """Run match-then-apply iterations.

        Each rule is (n_vars, lhs_pat, lhs_root, rhs_pat, rhs_root, cond_id)
        with cond_id -1 for unconditional rules.  Returns run statistics.
        """
        cdef int n_rules = len(rules)
        cdef int total_pat = 0
        cdef int ri, i, k, v, w
        for ri in range(n_rules):
            total_pat += len(rules[ri][1]) + len(rules[ri][3])
            if rules[ri][0] > MAXV:
                raise ValueError("too many pattern variables")
        cdef int* pop = <int*> malloc((total_pat + 1) * sizeof(int))
        cdef int* pr1 = <int*> malloc((total_pat + 1) * sizeof(int))
        cdef int* pr2 = <int*> malloc((total_pat + 1) * sizeof(int))
        cdef int* pr3 = <int*> malloc((total_pat + 1) * sizeof(int))
        cdef int* lhs_off = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* lhs_root = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* lhs_len = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* rhs_off = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* rhs_root = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* r_nv = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* r_cond = <int*> malloc((n_rules + 1) * sizeof(int))
        cdef int* lit_cache = <int*> malloc((total_pat + 1) * sizeof(int))
        cdef Matches matches
        matches.rows = NULL
        matches.count = 0
        matches.cap = 0
        cdef int env[MAXV]
        cdef Py_ssize_t mi, before_nodes, before_parent, ci, ni
        cdef int cid, root_op, rhs_cid, a_, b_, nv_, cond_
        cdef bint merged_any, has_op
        cdef int it
        stats = {"iters": 0, "hit_node_limit": False, "fixpoint": False}
        try:
            if (
                pop == NULL or pr1 == NULL or pr2 == NULL or pr3 == NULL
                or lhs_off == NULL or lhs_root == NULL or lhs_len == NULL
                or rhs_off == NULL or rhs_root == NULL or r_nv == NULL
                or r_cond == NULL or lit_cache == NULL
            ):
                raise MemoryError()
            # flatten patterns; child refs are pattern-local node indexes,
            # shift them into the shared arrays (leaf payloads untouched)
            w = 0
            for ri in range(n_rules):
                nv, lhs, lroot, rhs, rroot, cond = rules[ri]
                r_nv[ri] = nv
                r_cond[ri] = cond
                lhs_off[ri] = w
                lhs_len[ri] = len(lhs)
                for node in lhs:
                    pop[w] = node[0]
                    pr1[w] = node[1]
                    pr2[w] = node[2]
                    pr3[w] = node[3]
                    w += 1
                for i in range(lhs_off[ri], lhs_off[ri] + lhs_len[ri]):
                    if pop[i] >= FIRST_OP:
                        if pr1[i] >= 0:
                            pr1[i] += lhs_off[ri]
                        if pr2[i] >= 0:
                            pr2[i] += lhs_off[ri]
                        if pr3[i] >= 0:
                            pr3[i] += lhs_off[ri]
                lhs_root[ri] = lroot if lroot <= -2 else lhs_off[ri] + lroot
                rhs_off[ri] = w
                for node in rhs:
                    pop[w] = node[0]
                    pr1[w] = node[1]
                    pr2[w] = node[2]
                    pr3[w] = node[3]
                    w += 1
                for i in range(rhs_off[ri], w):
                    if pop[i] >= FIRST_OP:
                        if pr1[i] >= 0:
                            pr1[i] += rhs_off[ri]
                        if pr2[i] >= 0:
                            pr2[i] += rhs_off[ri]
                        if pr3[i] >= 0:
                            pr3[i] += rhs_off[ri]
                rhs_root[ri] = rroot if rroot <= -2 else rhs_off[ri] + rroot

            if self.extra or self.n_cls == 0:
                self._rebuild_c()
            for it in range(max_iters):
                if self.m_count >= max_nodes:
                    stats["hit_node_limit"] = True
                    break
                matches.count = 0
                for ri in range(n_rules):
                    nv_ = r_nv[ri]
                    for i in range(lhs_off[ri], lhs_off[ri] + lhs_len[ri]):
                        lit_cache[i] = -2
                    if lhs_root[ri] <= -2:
                        v = -lhs_root[ri] - 2
                        for ci in range(self.n_cls):
                            for k in range(nv_):
                                env[k] = -1
                            env[v] = self.cls_ids[ci]
                            _m_push(&matches, ri, self.cls_ids[ci], env, nv_)
                        continue
                    root_op = pop[lhs_root[ri]]
                    if root_op < FIRST_OP:
                        continue
                    for ci in range(self.n_cls):
                        has_op = False
                        for ni in range(self.cls_start[ci], self.cls_start[ci + 1]):
                            if self.fop[ni] == root_op:
                                has_op = True
                                break
                        if not has_op:
                            continue
                        for k in range(nv_):
                            env[k] = -1
                        self._match_into(
                            pop, pr1, pr2, pr3, lhs_root[ri], self.cls_ids[ci],
                            env, nv_, &matches, ri, lit_cache,
                        )
                before_nodes = self.m_count
                before_parent = self.n_ids
                merged_any = False
                for mi in range(matches.count):
                    if self.m_count >= max_nodes:
                        stats["hit_node_limit"] = True
                        break
                    ri = matches.rows[mi * MROW]
                    cid = matches.rows[mi * MROW + 1]
                    cond_ = r_cond[ri]
                    if cond_ >= 0 and guard is not None:
                        envl = []
                        for k in range(r_nv[ri]):
                            envl.append(matches.rows[mi * MROW + 2 + k])
                        if not guard(cond_, tuple(envl)):
                            continue
                    for k in range(MAXV):
                        env[k] = matches.rows[mi * MROW + 2 + k]
                    rhs_cid = self._instantiate(pop, pr1, pr2, pr3, rhs_root[ri], env)
                    a_ = self._find(cid)
                    b_ = self._find(rhs_cid)
                    if a_ != b_:
                        self._union_c(a_, b_)
                        merged_any = True
                self._rebuild_c()
                stats["iters"] += 1
                if (
                    not merged_any
                    and self.m_count == before_nodes
                    and self.n_ids == before_parent
                ):
                    stats["fixpoint"] = True
                    break
                if stats["hit_node_limit"]:
                    break
        finally:
            free(matches.rows)
            free(pop)
            free(pr1)
            free(pr2)
            free(pr3)
            free(lhs_off)
            free(lhs_root)
            free(lhs_len)
            free(rhs_off)
            free(rhs_root)
            free(r_nv)
            free(r_cond)
            free(lit_cache)
        stats["nodes"] = self.m_count
        stats["classes"] = self.n_classes()
        return stats

    # -- extraction --

    def extract_reps(self, op_costs, double leaf_cost, int budget=3):
        """Cheapest representative terms per class, up to `budget` alternates.

        Returns class -> sorted list of (cost, node, child_rep_slots).
        Slot -1 marks an unused child position.
        """
        if self.extra or (self.n_cls == 0 and self.m_count):
            self._rebuild_c()
        cdef int n_ops = len(op_costs)
        cdef double* costs = <double*> malloc((n_ops + 1) * sizeof(double))
        cdef int* ord_ci = <int*> malloc((self.n_cls + 1) * sizeof(int))
        # rep rows per class; extra headroom because entries past `budget`
        # survive until the post-visit sort, as in the fallback
        cdef Py_ssize_t stride = budget + MAXC
        cdef double* rcost = <double*> malloc((self.n_cls + 1) * stride * sizeof(double))
        cdef int* rnode = <int*> malloc((self.n_cls + 1) * stride * sizeof(int))
        cdef signed char* rsel = <signed char*> malloc((self.n_cls + 1) * stride * 3)
        cdef int* rcount = <int*> malloc((self.n_cls + 1) * sizeof(int))
        cdef bint changed, updated, found
        cdef Py_ssize_t oi, ni, ri_, base_i
        cdef int ci, op, child, cci, nc, slot, pass_no, combo_n, new_n, kk
        cdef double base
        cdef double ccost[MAXC]
        cdef signed char csel[MAXC][3]
        cdef double ncost[MAXC]
        cdef signed char nsel[MAXC][3]
        try:
            if (
                costs == NULL or ord_ci == NULL or rcost == NULL
                or rnode == NULL or rsel == NULL or rcount == NULL
            ):
                raise MemoryError()
            for kk in range(n_ops):
                costs[kk] = <double> op_costs[kk]
            ids = []
            for oi in range(self.n_cls):
                ids.append(self.cls_ids[oi])
            order = sorted(range(self.n_cls), key=ids.__getitem__)
            for oi in range(self.n_cls):
                ord_ci[oi] = <int> order[oi]
            memset(rcount, 0, (self.n_cls + 1) * sizeof(int))
            for pass_no in range(200):
                changed = False
                for oi in range(self.n_cls):
                    ci = ord_ci[oi]
                    base_i = ci * stride
                    for ni in range(self.cls_start[ci], self.cls_start[ci + 1]):
                        op = self.fop[ni]
                        if op < FIRST_OP:
                            combo_n = 1
                            ccost[0] = leaf_cost
                            csel[0][0] = -1
                            csel[0][1] = -1
                            csel[0][2] = -1
                        else:
                            base = costs[op]
                            combo_n = 1
                            ccost[0] = base
                            csel[0][0] = -1
                            csel[0][1] = -1
                            csel[0][2] = -1
                            for slot in range(3):
                                if slot == 0:
                                    child = self.fa[ni]
                                elif slot == 1:
                                    child = self.fb[ni]
                                else:
                                    child = self.fc[ni]
                                if child == -1:
                                    continue
                                cci = self.cid_to_ci[self._find(child)]
                                nc = rcount[cci] if cci >= 0 else 0
                                if nc > budget:
                                    nc = budget
                                if nc == 0:
                                    combo_n = 0
                                    break
                                new_n = 0
                                for kk in range(combo_n):
                                    for ri_ in range(nc):
                                        ncost[new_n] = ccost[kk] + rcost[cci * stride + ri_]
                                        nsel[new_n][0] = csel[kk][0]
                                        nsel[new_n][1] = csel[kk][1]
                                        nsel[new_n][2] = csel[kk][2]
                                        nsel[new_n][slot] = <signed char> ri_
                                        new_n += 1
                                combo_n = new_n
                                for kk in range(combo_n):
                                    ccost[kk] = ncost[kk]
                                    csel[kk][0] = nsel[kk][0]
                                    csel[kk][1] = nsel[kk][1]
                                    csel[kk][2] = nsel[kk][2]
                        if combo_n == 0:
                            continue
                        updated = False
                        for kk in range(combo_n):
                            found = False
                            for ri_ in range(rcount[ci]):
                                if (
                                    rnode[base_i + ri_] == <int> ni
                                    and rsel[(base_i + ri_) * 3] == csel[kk][0]
                                    and rsel[(base_i + ri_) * 3 + 1] == csel[kk][1]
                                    and rsel[(base_i + ri_) * 3 + 2] == csel[kk][2]
                                ):
                                    if rcost[base_i + ri_] != ccost[kk]:
                                        rcost[base_i + ri_] = ccost[kk]
                                        updated = True
                                    found = True
                                    break
                            if not found:
                                if (
                                    rcount[ci] < budget
                                    or ccost[kk] < rcost[base_i + rcount[ci] - 1]
                                ):
                                    rcost[base_i + rcount[ci]] = ccost[kk]
                                    rnode[base_i + rcount[ci]] = <int> ni
                                    rsel[(base_i + rcount[ci]) * 3] = csel[kk][0]
                                    rsel[(base_i + rcount[ci]) * 3 + 1] = csel[kk][1]
                                    rsel[(base_i + rcount[ci]) * 3 + 2] = csel[kk][2]
                                    rcount[ci] += 1
                                    updated = True
                        if updated:
                            self._sort_reps(ci, stride, rcost, rnode, rsel, rcount[ci])
                            if rcount[ci] > budget:
                                rcount[ci] = budget
                            changed = True
                if not changed:
                    break
            result = {}
            for oi in range(self.n_cls):
                ci = ord_ci[oi]
                base_i = ci * stride
                lst = []
                for ri_ in range(rcount[ci]):
                    ni = rnode[base_i + ri_]
                    lst.append(
                        (
                            rcost[base_i + ri_],
                            (self.fop[ni], self.fa[ni], self.fb[ni], self.fc[ni]),
                            (
                                rsel[(base_i + ri_) * 3],
                                rsel[(base_i + ri_) * 3 + 1],
                                rsel[(base_i + ri_) * 3 + 2],
                            ),
                        )
                    )
                result[self.cls_ids[ci]] = lst
        finally:
            free(costs)
            free(ord_ci)
            free(rcost)
            free(rnode)
            free(rsel)
            free(rcount)
        return result

    cdef void _sort_reps(
        self, int ci, Py_ssize_t stride,
        double* rcost, int* rnode, signed char* rsel, int n,
    ):
        """Insertion sort by (cost, node tuple, sel tuple): the same ordering
        the fallback gets from sorting Python tuples.  Stable."""
        cdef Py_ssize_t base_i = ci * stride
        cdef int i, j
        cdef double tc
        cdef int tn
        cdef signed char s0, s1, s2
        for i in range(1, n):
            tc = rcost[base_i + i]
            tn = rnode[base_i + i]
            s0 = rsel[(base_i + i) * 3]
            s1 = rsel[(base_i + i) * 3 + 1]
            s2 = rsel[(base_i + i) * 3 + 2]
            j = i - 1
            while j >= 0 and self._rep_gt(base_i, j, tc, tn, s0, s1, s2, rcost, rnode, rsel):
                rcost[base_i + j + 1] = rcost[base_i + j]
                rnode[base_i + j + 1] = rnode[base_i + j]
                rsel[(base_i + j + 1) * 3] = rsel[(base_i + j) * 3]
                rsel[(base_i + j + 1) * 3 + 1] = rsel[(base_i + j) * 3 + 1]
                rsel[(base_i + j + 1) * 3 + 2] = rsel[(base_i + j) * 3 + 2]
                j -= 1
            rcost[base_i + j + 1] = tc
            rnode[base_i + j + 1] = tn
            rsel[(base_i + j + 1) * 3] = s0
            rsel[(base_i + j + 1) * 3 + 1] = s1
            rsel[(base_i + j + 1) * 3 + 2] = s2

    cdef bint _rep_gt(
        self, Py_ssize_t base_i, int j,
        double tc, int tn, signed char s0, signed char s1, signed char s2,
        double* rcost, int* rnode, signed char* rsel,
    ):
        """True when rep j sorts strictly after the probe (cost, node, sel)."""
        cdef double jc = rcost[base_i + j]
        if jc != tc:
            return jc > tc
        cdef int cmp_ = self._node_cmp(rnode[base_i + j], tn)
        if cmp_ != 0:
            return cmp_ > 0
        cdef signed char js
        js = rsel[(base_i + j) * 3]
        if js != s0:
            return js > s0
        js = rsel[(base_i + j) * 3 + 1]
        if js != s1:
            return js > s1
        js = rsel[(base_i + j) * 3 + 2]
        return js > s2

    cdef int _node_cmp(self, Py_ssize_t ni, Py_ssize_t nj):
        if self.fop[ni] != self.fop[nj]:
            return 1 if self.fop[ni] > self.fop[nj] else -1
        if self.fa[ni] != self.fa[nj]:
            return 1 if self.fa[ni] > self.fa[nj] else -1
        if self.fb[ni] != self.fb[nj]:
            return 1 if self.fb[ni] > self.fb[nj] else -1
        if self.fc[ni] != self.fc[nj]:
            return 1 if self.fc[ni] > self.fc[nj] else -1
        return 0
