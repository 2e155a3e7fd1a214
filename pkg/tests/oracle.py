"""Bounded-unrolling ground truth, independent of the zone reasoner.

derivable(p, args, k): p(args) has a derivation tree of height <= k.
refutable(p, args, k): from p(args) a query is reachable in <= k clause
applications (side premises of non-linear clauses must be derivable).
Both are encoded as one SMT formula over fresh copies of clause variables.

Also here: an UNSAT-derivation replayer that grounds steps with z3's
simplifier, and a SAT check that hands z3 the original file with the
predicates replaced by the printed definitions.
"""

from __future__ import annotations

import itertools
import re

import z3

_fresh = itertools.count()


def _copy(c):
    """Clause copy with fresh variables: (constraint, body args, head args)."""
    vs = c.all_vars
    k = next(_fresh)
    new = [z3.Const(f"{x.decl().name()}!o{k}", x.sort()) for x in vs]
    sub = list(zip(vs, new))

    def s(e):
        return z3.substitute(e, *sub) if sub else e

    body = [(a.pred.name, [s(t) for t in a.args]) for a in c.body]
    head = (c.head.pred.name, [s(t) for t in c.head.args]) if c.head is not None else None
    return s(c.constraint), body, head


def _eqs(xs, ys):
    return [x == y for x, y in zip(xs, ys)]


def derivable_formula(h, pred: str, args, k: int) -> z3.BoolRef:
    if k <= 0:
        return z3.BoolVal(False)
    out = []
    for c in h.clauses:
        if c.head is None or c.head.pred.name != pred:
            continue
        phi, body, head = _copy(c)
        parts = [phi, *_eqs(head[1], args)]
        parts += [derivable_formula(h, q, ts, k - 1) for q, ts in body]
        out.append(z3.And(parts))
    return z3.Or(out) if out else z3.BoolVal(False)


def refutable_formula(h, pred: str, args, k: int, side_depth: int) -> z3.BoolRef:
    if k <= 0:
        return z3.BoolVal(False)
    out = []
    for c in h.clauses:
        for i, app in enumerate(c.body):
            if app.pred.name != pred:
                continue
            phi, body, head = _copy(c)
            parts = [phi, *_eqs(body[i][1], args)]
            parts += [derivable_formula(h, q, ts, side_depth) for j, (q, ts) in enumerate(body) if j != i]
            if head is not None:
                parts.append(refutable_formula(h, head[0], head[1], k - 1, side_depth))
            out.append(z3.And(parts))
    return z3.Or(out) if out else z3.BoolVal(False)


def _sat(f, timeout_ms=60000) -> bool:
    # unrolling chains many argument equalities; eliminating them first
    # keeps z3's search time stable
    s = z3.Then("simplify", "propagate-values", "solve-eqs", "smt").solver()
    s.set("timeout", timeout_ms)
    s.add(f)
    r = s.check()
    if r == z3.unknown:
        raise RuntimeError(f"oracle undecided: {s.reason_unknown()}")
    return r == z3.sat


def _consts(pred, point):
    return [z3.BoolVal(bool(v)) if isinstance(v, bool) else z3.IntVal(int(v)) for v in point]


def is_derivable(h, pred, point, k: int) -> bool:
    name = pred if isinstance(pred, str) else pred.name
    return _sat(derivable_formula(h, name, _consts(name, point), k))


def is_refutable(h, pred, point, k: int, side_depth: int | None = None) -> bool:
    name = pred if isinstance(pred, str) else pred.name
    return _sat(refutable_formula(h, name, _consts(name, point), k, side_depth or k))


def has_refutation(h, k: int) -> bool:
    """Some query's body is derivable with trees of height <= k."""
    for c in h.clauses:
        if c.head is not None:
            continue
        phi, body, _ = _copy(c)
        if _sat(z3.And([phi, *[derivable_formula(h, q, ts, k) for q, ts in body]])):
            return True
    return False


def _value(v, sort):
    return z3.BoolVal(bool(v)) if sort == z3.BoolSort() else z3.IntVal(int(v))


def _ground(e, a):
    vs = [x for x in _vars(e)]
    sub = [(x, _value(a[x.decl().name()], x.sort())) for x in vs]
    return z3.simplify(z3.substitute(e, *sub) if sub else e)


def _vars(e):
    out, seen = [], set()

    def go(t):
        if t.get_id() in seen:
            return
        seen.add(t.get_id())
        if z3.is_const(t) and t.decl().kind() == z3.Z3_OP_UNINTERPRETED:
            out.append(t)
        for ch in t.children():
            go(ch)

    go(e)
    return out


def replay_derivation(steps) -> bool:
    """Each step's constraint simplifies to true under its assignment,
    every body atom was produced by an earlier step, and the chain ends
    in a query. Uses z3's simplifier, not the solver's evaluator."""
    derived = set()
    for k, st in enumerate(steps):
        c, a = st.clause, st.assignment
        if not z3.is_true(_ground(c.constraint, a)):
            return False
        for app in c.body:
            atom = (app.pred.name, tuple(_ground(t, a).sexpr() for t in app.args))
            if atom not in derived:
                return False
        if c.head is None:
            return k == len(steps) - 1
        derived.add((c.head.pred.name, tuple(_ground(t, a).sexpr() for t in c.head.args)))
    return False


_DECL = re.compile(r"\(declare-fun\s+(\|[^|]*\||[^\s()]+)\s*\(([^()]*)\)\s*Bool\s*\)")


def model_satisfies(smt2_text: str, definitions: str) -> bool:
    """True iff the `define-fun`s make every assertion of the Horn file
    valid, decided by z3 on the original text with the predicate
    declarations swapped for the definitions."""
    body = _DECL.sub("", smt2_text)
    body = re.sub(r"\(set-logic[^)]*\)|\(check-sat\)|\(exit\)|\(get-model\)", "", body)
    s = z3.Solver()
    s.set("timeout", 60000)
    s.from_string(definitions + "\n" + body)
    r = s.check()
    if r == z3.unknown:
        raise RuntimeError(f"model check undecided: {s.reason_unknown()}")
    return r == z3.sat
