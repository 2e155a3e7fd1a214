"""Attribute templates for the decision tree: unary, octagon, SVM planes
and mod-k terms."""

from __future__ import annotations

from dataclasses import dataclass

import z3

from .model import ChcSystem, Predicate, Sort
from .svm import Hyperplane


@dataclass(frozen=True)
class Attribute:
    """lhs is sum(terms[i] * v_i), or (v_i mod k) when mod_k > 0 (then
    terms has a single 1 at position i). Compared against a threshold
    as lhs <= c."""

    terms: tuple[int, ...]
    mod_k: int = 0

    def value(self, x) -> int:
        if self.mod_k:
            i = self.terms.index(1)
            return int(x[i]) % self.mod_k
        return sum(c * int(v) for c, v in zip(self.terms, x) if c)

    def lhs(self, vs) -> z3.ExprRef:
        if self.mod_k:
            i = self.terms.index(1)
            return vs[i] % self.mod_k
        parts = []
        for c, v in zip(self.terms, vs):
            if c == 0:
                continue
            if z3.is_bool(v):
                v = z3.If(v, z3.IntVal(1), z3.IntVal(0))
            parts.append(v if c == 1 else -v if c == -1 else c * v)
        if not parts:
            return z3.IntVal(0)
        return parts[0] if len(parts) == 1 else z3.Sum(parts)

    def literal(self, vs, c: int) -> z3.ExprRef:
        """The z3 atom lhs <= c, with Boolean unary attributes kept Boolean."""
        nz = [i for i, t in enumerate(self.terms) if t]
        if not self.mod_k and len(nz) == 1 and z3.is_bool(vs[nz[0]]):
            v, t = vs[nz[0]], self.terms[nz[0]]
            # t*v <= c with v in {0,1}
            lo, hi = 0 <= c, t <= c
            if lo and hi:
                return z3.BoolVal(True)
            if not lo and not hi:
                return z3.BoolVal(False)
            return z3.Not(v) if lo else v
        return self.lhs(vs) <= c

    def __str__(self):
        names = [f"v{i}" for i in range(len(self.terms))]
        if self.mod_k:
            return f"{names[self.terms.index(1)]} mod {self.mod_k}"
        out = ""
        for c, n in zip(self.terms, names):
            if not c:
                continue
            sign = "-" if c < 0 else ("+" if out else "")
            mag = "" if abs(c) == 1 else f"{abs(c)}*"
            out += f"{sign}{mag}{n}"
        return out or "0"


def generate_attributes(pred: Predicate, planes: list[Hyperplane] = (), mod_ks=()) -> list[Attribute]:
    """Unary terms, +-vi+-vj for i<j over integer arguments, plane
    left-hand sides, then vi mod k; exact duplicates dropped."""
    n = pred.arity
    ints = [i for i, s in enumerate(pred.arg_sorts) if s is Sort.INT]
    out: list[Attribute] = []
    seen = set()

    def add(a: Attribute):
        if a not in seen and any(a.terms):
            seen.add(a)
            out.append(a)

    def unit(i, c=1):
        t = [0] * n
        t[i] = c
        return t

    for i in range(n):
        add(Attribute(tuple(unit(i))))
    for a_i, i in enumerate(ints):
        for j in ints[a_i + 1:]:
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                t = [0] * n
                t[i], t[j] = si, sj
                add(Attribute(tuple(t)))
    for h in planes:
        add(Attribute(tuple(h.coeffs)))
    for k in sorted(mod_ks):
        for i in ints:
            add(Attribute(tuple(unit(i)), k))
    return out


def find_mod_patterns(h: ChcSystem) -> set[int]:
    """Constant moduli k >= 2 of mod/div/rem terms in clause constraints."""
    ks: set[int] = set()
    seen: set[int] = set()
    ops = (z3.Z3_OP_MOD, z3.Z3_OP_IDIV, z3.Z3_OP_REM)

    def go(e):
        if e.get_id() in seen:
            return
        seen.add(e.get_id())
        if z3.is_app(e):
            if e.decl().kind() in ops:
                k = e.arg(1)
                if z3.is_int_value(k) and k.as_long() >= 2:
                    ks.add(k.as_long())
            for ch in e.children():
                go(ch)
        elif z3.is_quantifier(e):
            go(e.body())

    for c in h.clauses:
        go(c.constraint)
    return ks
