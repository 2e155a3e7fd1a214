"""CHC data model: predicates, clauses, systems, and preprocessing."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace

import z3

from . import smt


class MalformedSystem(Exception):
    pass


class Sort(enum.Enum):
    INT = "Int"
    BOOL = "Bool"

    def z3(self) -> z3.SortRef:
        return z3.IntSort() if self is Sort.INT else z3.BoolSort()

    @classmethod
    def of(cls, s: z3.SortRef) -> "Sort":
        if s == z3.IntSort():
            return cls.INT
        if s == z3.BoolSort():
            return cls.BOOL
        raise ValueError(f"unsupported sort {s}")


@dataclass(frozen=True)
class Predicate:
    name: str
    arg_sorts: tuple[Sort, ...]

    @property
    def arity(self) -> int:
        return len(self.arg_sorts)

    @property
    def canonical_vars(self) -> tuple[z3.ExprRef, ...]:
        return tuple(z3.Const(f"v{i}", s.z3()) for i, s in enumerate(self.arg_sorts))

    def decl(self) -> z3.FuncDeclRef:
        return z3.Function(self.name, *[s.z3() for s in self.arg_sorts], z3.BoolSort())

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=False)
class PredApp:
    pred: Predicate
    args: tuple[z3.ExprRef, ...]

    def instantiate(self, formula: z3.ExprRef) -> z3.ExprRef:
        """Substitute this application's arguments for the canonical
        variables of `formula`."""
        pairs = list(zip(self.pred.canonical_vars, self.args))
        return z3.substitute(formula, *pairs) if pairs else formula

    def as_z3(self) -> z3.ExprRef:
        return self.pred.decl()(*self.args) if self.args else z3.Bool(self.pred.name)

    def __str__(self):
        return f"{self.pred.name}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class ClauseKind:
    is_fact: bool
    is_query: bool
    is_linear: bool
    is_trivial: bool

    @property
    def is_rule(self) -> bool:
        return not self.is_query


@dataclass(frozen=True, eq=False)
class Clause:
    constraint: z3.ExprRef
    body: tuple[PredApp, ...] = ()
    head: PredApp | None = None
    label: str = ""

    @property
    def all_vars(self) -> list[z3.ExprRef]:
        seen: dict[str, z3.ExprRef] = {}
        for t in [self.constraint, *(a for app in self.apps for a in app.args)]:
            for x in smt.free_vars(t):
                seen.setdefault(x.decl().name(), x)
        return list(seen.values())

    @property
    def apps(self) -> list[PredApp]:
        return list(self.body) + ([self.head] if self.head is not None else [])

    @property
    def kind(self) -> ClauseKind:
        return classify_clause(self)

    def as_z3(self) -> z3.ExprRef:
        """The clause as a closed formula over uninterpreted predicates."""
        body = smt.mk_and([self.constraint, *(a.as_z3() for a in self.body)])
        head = self.head.as_z3() if self.head is not None else smt.FALSE
        vs = self.all_vars
        f = z3.Implies(body, head)
        return z3.ForAll(vs, f) if vs else f

    def __str__(self):
        body = " /\\ ".join([str(self.constraint)] + [str(a) for a in self.body])
        return f"{body} -> {self.head if self.head else 'false'}"


def classify_clause(c: Clause) -> ClauseKind:
    no_body = len(c.body) == 0
    query = c.head is None
    return ClauseKind(
        is_fact=no_body and not query,
        is_query=query,
        is_linear=len(c.body) <= 1,
        is_trivial=no_body and query,
    )


@dataclass(eq=False)
class ChcSystem:
    predicates: dict[str, Predicate]
    clauses: list[Clause]
    # predicates removed by preprocessing, with the constant they were fixed to
    fixed: dict[str, bool] = field(default_factory=dict)
    normalized: bool = False

    def clauses_with_head(self, p: Predicate) -> list[Clause]:
        return [c for c in self.clauses if c.head is not None and c.head.pred.name == p.name]

    @property
    def facts(self) -> list[Clause]:
        return [c for c in self.clauses if c.kind.is_fact]

    @property
    def queries(self) -> list[Clause]:
        return [c for c in self.clauses if c.kind.is_query]

    def __str__(self):
        return "\n".join(str(c) for c in self.clauses)


def _check_declared(h: ChcSystem) -> None:
    for c in h.clauses:
        for app in c.apps:
            p = h.predicates.get(app.pred.name)
            if p is None or p != app.pred:
                raise MalformedSystem(f"undeclared predicate {app.pred.name}")
            if len(app.args) != p.arity:
                raise MalformedSystem(f"arity mismatch in {app}")


def normalize_clause(c: Clause, backend: smt.Backend | None = None) -> Clause:
    """Give every predicate argument its own fresh variable; the original
    terms move into the constraint as equalities."""
    taken = {x.decl().name() for x in c.all_vars}
    counter = itertools.count()
    eqs = []

    def fresh_app(app: PredApp) -> PredApp:
        slot = next(counter)
        args = []
        for i, (t, s) in enumerate(zip(app.args, app.pred.arg_sorts)):
            name = f"{app.pred.name}_{slot}_{i}"
            while name in taken:
                name += "'"
            taken.add(name)
            x = z3.Const(name, s.z3())
            args.append(x)
            eqs.append(x == t)
        return PredApp(app.pred, tuple(args))

    body = tuple(fresh_app(a) for a in c.body)
    head = fresh_app(c.head) if c.head is not None else None
    constraint = smt.mk_and([c.constraint, *eqs])
    constraint = backend.simplify(constraint) if backend else smt.structural_simplify(constraint)
    return Clause(constraint, body, head, c.label)


def _forced_value(c: Clause, backend: smt.Backend) -> tuple[str, bool] | None:
    """A fact `phi -> p(x)` whose constraint holds for every x forces p to
    true; a query `phi /\\ p(x) -> false` with such a constraint forces
    p to false."""
    k = c.kind
    if k.is_fact:
        app = c.head
    elif k.is_query and len(c.body) == 1:
        app = c.body[0]
    else:
        return None
    keep = {x.decl().name() for x in app.args}
    if len(keep) != len(app.args):
        return None
    elim = [x for x in c.all_vars if x.decl().name() not in keep]
    try:
        proj = backend.qelim(elim, c.constraint)
    except smt.QeFailure:
        return None
    if backend.is_valid(proj):
        return app.pred.name, k.is_fact
    return None


def _propagate(h: ChcSystem, name: str, value: bool) -> list[Clause]:
    out = []
    for c in h.clauses:
        if value:
            if c.head is not None and c.head.pred.name == name:
                continue
            body = tuple(a for a in c.body if a.pred.name != name)
            out.append(replace(c, body=body))
        else:
            if any(a.pred.name == name for a in c.body):
                continue
            if c.head is not None and c.head.pred.name == name:
                out.append(replace(c, head=None))
            else:
                out.append(c)
    return out


def normalize_system(h: ChcSystem, backend: smt.Backend | None = None) -> ChcSystem:
    """Rewrite predicate arguments into distinct fresh variables, drop
    vacuous clauses, fix and propagate predicates that are forced to
    true/false, and simplify constraints; repeated until nothing changes."""
    _check_declared(h)
    backend = backend or smt.Backend()
    clauses = [normalize_clause(c, backend) for c in h.clauses]
    # unsatisfiable constraints that simplification cannot reduce to false
    clauses = [c for c in clauses if not backend.check(c.constraint, c.all_vars).is_unsat]
    preds = dict(h.predicates)
    fixed = dict(h.fixed)
    cur = ChcSystem(preds, clauses, fixed, normalized=True)
    changed = True
    while changed:
        changed = False
        kept = []
        for c in cur.clauses:
            phi = backend.simplify(c.constraint)
            if z3.is_false(phi):
                changed = True
                continue
            kept.append(replace(c, constraint=phi) if not phi.eq(c.constraint) else c)
        cur.clauses = kept

        in_head = {c.head.pred.name for c in cur.clauses if c.head is not None}
        in_body = {a.pred.name for c in cur.clauses for a in c.body}
        decision = None
        for name in sorted(cur.predicates):
            if name not in in_head:
                decision = (name, False)
            elif name not in in_body:
                decision = (name, True)
            if decision:
                break
        if decision is None:
            for c in cur.clauses:
                decision = _forced_value(c, backend)
                if decision:
                    break
        if decision:
            name, value = decision
            cur.clauses = _propagate(cur, name, value)
            cur.fixed[name] = value
            del cur.predicates[name]
            changed = True
    return cur
