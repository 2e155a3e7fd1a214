"""Safe and unsafe zones: initialization from facts and linear queries,
bounded forward/backward expansion with quantifier elimination, and the
zone-zone overlap check."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import z3

from . import smt
from .model import ChcSystem, Clause, Predicate

log = logging.getLogger(__name__)

SAFE, UNSAFE = "safe", "unsafe"


@dataclass
class ReasonerConfig:
    body_size_skip: int = 500
    zone_size_stop: int = 1500
    max_rounds: int = 3
    expand_enabled: bool = True

    def __post_init__(self):
        if min(self.body_size_skip, self.zone_size_stop) <= 0 or self.max_rounds < 0:
            raise ValueError("reasoner limits must be positive")


@dataclass
class ZoneEntry:
    """One disjunct of a zone and the clause that produced it."""

    formula: z3.ExprRef
    clause: Clause
    index: int
    depth: int


@dataclass
class Zone:
    pred: Predicate
    polarity: str
    formula: z3.ExprRef = smt.FALSE
    depth: int = 0
    frozen: bool = False
    freeze_reason: str = ""
    entries: list[ZoneEntry] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return z3.is_false(self.formula)

    def contains(self, point) -> bool:
        return smt.holds_at(self.formula, self.pred.canonical_vars, point)


@dataclass
class ConflictWitness:
    kind: str
    pred: Predicate
    point: tuple


@dataclass
class Step:
    """A ground instance of a clause: the clause and a total assignment."""

    clause: Clause
    assignment: dict


class ZoneMap:
    def __init__(self, system: ChcSystem):
        self.system = system
        self.zones: dict[tuple[str, str], Zone] = {}
        for p in system.predicates.values():
            for pol in (SAFE, UNSAFE):
                self.zones[p.name, pol] = Zone(p, pol)
        self.skipped: list[str] = []
        self.version = 0
        self._counter = itertools.count()

    def safe(self, p: Predicate | str) -> Zone:
        return self.zones[_name(p), SAFE]

    def unsafe(self, p: Predicate | str) -> Zone:
        return self.zones[_name(p), UNSAFE]

    def __iter__(self):
        return iter(self.zones.values())

    def snapshot(self) -> dict[tuple[str, str], z3.ExprRef]:
        return {k: z.formula for k, z in self.zones.items()}

    def add_disjunct(self, zone: Zone, f: z3.ExprRef, clause: Clause, depth: int,
                     backend: smt.Backend, cfg: ReasonerConfig | None) -> bool:
        """Weaken `zone` by `f`; returns whether the zone changed."""
        if zone.frozen or z3.is_false(f):
            return False
        if not zone.empty and backend.is_valid(z3.Implies(f, zone.formula)):
            return False
        new = smt.mk_or([zone.formula, f])
        if cfg is not None and smt.size(new) > cfg.zone_size_stop:
            zone.frozen, zone.freeze_reason = True, "size"
            log.debug("zone %s/%s frozen: size %d", zone.pred, zone.polarity, smt.size(new))
            return False
        zone.formula = new
        zone.depth = depth
        zone.entries.append(ZoneEntry(f, clause, next(self._counter), depth))
        self.version += 1
        return True

    def entries_before(self, p: str, pol: str, index: float) -> z3.ExprRef:
        z = self.zones[p, pol]
        return smt.mk_or([e.formula for e in z.entries if e.index < index])


def _name(p) -> str:
    return p if isinstance(p, str) else p.name


def _to_canonical(f: z3.ExprRef, args) -> z3.ExprRef:
    pairs = [(a, v) for a, v in zip(args, _canon_of(args))]
    return z3.substitute(f, *pairs) if pairs else f


def _canon_of(args):
    return [z3.Const(f"v{i}", a.sort()) for i, a in enumerate(args)]


def _project(clause: Clause, body: z3.ExprRef, keep_args, backend: smt.Backend) -> z3.ExprRef:
    """exists (clause vars minus keep_args). body, over canonical vars."""
    keep = {a.decl().name() for a in keep_args}
    elim = [x for x in clause.all_vars if x.decl().name() not in keep]
    out = backend.qelim(elim, body)
    return _to_canonical(backend.simplify(out), keep_args)


def init_zones(h: ChcSystem, backend: smt.Backend, cfg: ReasonerConfig | None = None) -> ZoneMap:
    zm = ZoneMap(h)
    for c in h.clauses:
        k = c.kind
        if k.is_fact:
            zone, app = zm.safe(c.head.pred), c.head
        elif k.is_query and len(c.body) == 1:
            zone, app = zm.unsafe(c.body[0].pred), c.body[0]
        else:
            continue
        try:
            f = _project(c, c.constraint, app.args, backend)
        except smt.QeFailure:
            zone.frozen, zone.freeze_reason = True, "qe"
            continue
        zm.add_disjunct(zone, f, c, 0, backend, None)
    return zm


def forward_expand(zm: ZoneMap, r: Clause, cfg: ReasonerConfig, backend: smt.Backend,
                   sources: dict | None = None, depth: int | None = None) -> ZoneMap:
    """One forward image of the safe zones through the rule `r`.

    `sources` optionally pins the zone formulas read from (a snapshot taken
    at the start of a sweep)."""
    k = r.kind
    if k.is_fact or k.is_query:
        return zm
    zone = zm.safe(r.head.pred)
    if zone.frozen:
        return zm
    if smt.size(r.constraint) > cfg.body_size_skip:
        zm.skipped.append(r.label)
        return zm
    src = sources if sources is not None else zm.snapshot()
    parts = [r.constraint]
    for app in r.body:
        s = src[app.pred.name, SAFE]
        if z3.is_false(s):
            return zm
        parts.append(app.instantiate(s))
    try:
        f = _project(r, smt.mk_and(parts), r.head.args, backend)
    except smt.QeFailure:
        zone.frozen, zone.freeze_reason = True, "qe"
        return zm
    zm.add_disjunct(zone, f, r, depth if depth is not None else zone.depth + 1, backend, cfg)
    return zm


def backward_expand(zm: ZoneMap, r: Clause, cfg: ReasonerConfig, backend: smt.Backend,
                    sources: dict | None = None, depth: int | None = None) -> ZoneMap:
    """One backward pre-image of the head's unsafe zone through a linear rule."""
    k = r.kind
    if k.is_fact or k.is_query or len(r.body) != 1:
        return zm
    app = r.body[0]
    zone = zm.unsafe(app.pred)
    if zone.frozen:
        return zm
    if smt.size(r.constraint) > cfg.body_size_skip:
        zm.skipped.append(r.label)
        return zm
    src = sources if sources is not None else zm.snapshot()
    u = src[r.head.pred.name, UNSAFE]
    if z3.is_false(u):
        return zm
    body = smt.mk_and([r.constraint, r.head.instantiate(u)])
    try:
        f = _project(r, body, app.args, backend)
    except smt.QeFailure:
        zone.frozen, zone.freeze_reason = True, "qe"
        return zm
    zm.add_disjunct(zone, f, r, depth if depth is not None else zone.depth + 1, backend, cfg)
    return zm


def expand_zones(zm: ZoneMap, cfg: ReasonerConfig, backend: smt.Backend) -> ZoneMap:
    """Round-robin sweeps over all non-fact rules. Each sweep reads the
    zones as they were when the sweep started, so a zone at depth m only
    holds points reachable within m+1 clause applications."""
    if not cfg.expand_enabled:
        return zm
    rules = [c for c in zm.system.clauses if not c.kind.is_fact and not c.kind.is_query]
    for sweep in range(1, cfg.max_rounds + 1):
        before, version = zm.snapshot(), zm.version
        for r in rules:
            forward_expand(zm, r, cfg, backend, before, sweep)
            backward_expand(zm, r, cfg, backend, before, sweep)
        if zm.version == version or all(z.frozen for z in zm):
            break
    return zm


def zone_conflict(zm: ZoneMap, backend: smt.Backend, use_safe=True, use_unsafe=True) -> ConflictWitness | None:
    if not (use_safe and use_unsafe):
        return None
    for p in zm.system.predicates.values():
        s, u = zm.safe(p), zm.unsafe(p)
        if s.empty or u.empty:
            continue
        v = backend.check(smt.mk_and([s.formula, u.formula]), p.canonical_vars)
        if v.is_sat:
            point = tuple(v.model[x.decl().name()] for x in p.canonical_vars)
            return ConflictWitness("ZoneZone", p, point)
    return None


class DerivationError(Exception):
    pass


def _ground(backend: smt.Backend, c: Clause, f: z3.ExprRef) -> dict:
    v = backend.check(f, c.all_vars)
    if not v.is_sat:
        raise DerivationError(f"no ground instance of {c.label}: {v.kind}")
    return v.model


def _point(app, assignment) -> tuple:
    return tuple(assignment[a.decl().name()] for a in app.args)


def _pin(app, point) -> z3.ExprRef:
    return smt.mk_and([a == smt.value_expr(v, a.sort()) for a, v in zip(app.args, point)])


def derive_safe(zm: ZoneMap, p: Predicate, point: tuple, backend: smt.Backend,
                before: float = float("inf")) -> list[Step]:
    """Ground clause instances deriving p(point) from facts, following the
    provenance of the safe-zone disjunct that contains the point."""
    for e in zm.safe(p).entries:
        if e.index >= before or not smt.holds_at(e.formula, p.canonical_vars, point):
            continue
        c = e.clause
        parts = [c.constraint, _pin(c.head, point)]
        for app in c.body:
            parts.append(app.instantiate(zm.entries_before(app.pred.name, SAFE, e.index)))
        a = _ground(backend, c, smt.mk_and(parts))
        steps: list[Step] = []
        for app in c.body:
            steps += derive_safe(zm, app.pred, _point(app, a), backend, e.index)
        return steps + [Step(c, a)]
    raise DerivationError(f"{p}{point} not in the safe zone")


def refute_unsafe(zm: ZoneMap, p: Predicate, point: tuple, backend: smt.Backend,
                  before: float = float("inf")) -> list[Step]:
    """Ground clause instances that, given p(point), reach false."""
    for e in zm.unsafe(p).entries:
        if e.index >= before or not smt.holds_at(e.formula, p.canonical_vars, point):
            continue
        c = e.clause
        parts = [c.constraint, _pin(c.body[0], point)]
        if c.head is not None:
            parts.append(c.head.instantiate(zm.entries_before(c.head.pred.name, UNSAFE, e.index)))
        a = _ground(backend, c, smt.mk_and(parts))
        steps = [Step(c, a)]
        if c.head is not None:
            steps += refute_unsafe(zm, c.head.pred, _point(c.head, a), backend, e.index)
        return steps
    raise DerivationError(f"{p}{point} not in the unsafe zone")
