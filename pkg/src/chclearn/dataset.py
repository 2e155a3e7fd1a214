"""Labeled data points per predicate, implication samples, and the
sample-level UNSAT checks.

Firm labels are kept in a registry together with their provenance (the
ground clause instance that produced them) so that a conflict can be
turned into a replayable derivation."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import z3

from . import smt
from .model import Clause, Predicate
from .reasoner import (SAFE, UNSAFE, ConflictWitness, Step, Zone, ZoneMap,
                       derive_safe, refute_unsafe)

log = logging.getLogger(__name__)

POS, NEG = "pos", "neg"


@dataclass(frozen=True)
class DataPoint:
    pred: Predicate
    values: tuple

    def __post_init__(self):
        if len(self.values) != self.pred.arity:
            raise ValueError(f"{self.pred} expects {self.pred.arity} values, got {self.values}")

    def __str__(self):
        return f"{self.pred.name}{self.values}"


@dataclass(frozen=True)
class Sample:
    point: DataPoint
    label: str


@dataclass(eq=False)
class ImplicationSample:
    body_points: tuple[DataPoint, ...]
    head_point: DataPoint | None  # None: the clause is a non-linear query
    step: Step | None = None
    stale: bool = False

    def __post_init__(self):
        if not self.body_points:
            raise ValueError("implication sample needs a body")

    @property
    def key(self):
        return self.body_points, self.head_point

    @property
    def points(self) -> list[DataPoint]:
        return list(self.body_points) + ([self.head_point] if self.head_point else [])


@dataclass
class Provenance:
    """Why a point carries its firm label.

    kind is one of fact, query, forward (implication, all body positive),
    backward (implication, head negative), zone."""

    kind: str
    step: Step | None = None
    sources: tuple[DataPoint, ...] = ()


@dataclass
class QueueMode:
    a: int = 1000
    b: int = 1000

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("queue sizes must be positive")


def _point_of(app, assignment) -> tuple:
    return tuple(assignment[a.decl().name()] for a in app.args)


def convert_counterexample(c: Clause, cex: dict) -> list:
    """Samples implied by a counterexample of clause `c`."""
    k = c.kind
    if k.is_fact:
        return [Sample(DataPoint(c.head.pred, _point_of(c.head, cex)), POS)]
    body = tuple(DataPoint(a.pred, _point_of(a, cex)) for a in c.body)
    if k.is_query and len(body) == 1:
        return [Sample(body[0], NEG)]
    if k.is_trivial:
        return []
    head = DataPoint(c.head.pred, _point_of(c.head, cex)) if c.head is not None else None
    return [ImplicationSample(body, head, Step(c, dict(cex)))]


class Dataset:
    def __init__(self, predicates, mode: QueueMode | None = None, tentative_clear_period: int = 10):
        if tentative_clear_period <= 0:
            raise ValueError("tentative_clear_period must be positive")
        self.mode = mode
        self.tentative_clear_period = tentative_clear_period
        self.predicates = {p.name: p for p in predicates}
        maxpos = mode.a if mode else None
        maxneg = mode.b if mode else None
        self.positives = {n: deque(maxlen=maxpos) for n in self.predicates}
        self.negatives = {n: deque(maxlen=maxneg) for n in self.predicates}
        self.tentative_positives: dict[str, set] = {n: set() for n in self.predicates}
        self.tentative_negatives: dict[str, set] = {n: set() for n in self.predicates}
        self.pending_implications: list[ImplicationSample] = []
        # every firm label ever assigned, with provenance; never evicted
        self.labels: dict[DataPoint, str] = {}
        self.provenance: dict[DataPoint, Provenance] = {}
        # SampleSample conflicts with the provenance of the rejected label
        self.conflicts: list[tuple[ConflictWitness, Provenance]] = []
        self.implications_resolved = 0
        self._zone_checked = 0
        self._order: list[DataPoint] = []

    # -- labels -----------------------------------------------------------

    def label(self, p: DataPoint) -> str | None:
        return self.labels.get(p)

    def is_pos(self, p: DataPoint) -> bool:
        return self.labels.get(p) == POS

    def is_neg(self, p: DataPoint) -> bool:
        return self.labels.get(p) == NEG

    def add_firm(self, p: DataPoint, label: str, prov: Provenance) -> bool:
        """Record a firm label; returns whether anything new was learned.
        An opposite firm label is recorded as a SampleSample conflict."""
        old = self.labels.get(p)
        if old == label:
            return False
        if old is not None:
            self.conflicts.append((ConflictWitness("SampleSample", p.pred, p.values), prov))
            return True
        self.labels[p] = label
        self.provenance[p] = prov
        self._order.append(p)
        name = p.pred.name
        (self.positives if label == POS else self.negatives)[name].append(p)
        self.tentative_negatives[name].discard(p)
        self.tentative_positives[name].discard(p)
        return True

    def add_tentative(self, p: DataPoint, label: str = NEG) -> bool:
        if p in self.labels:
            return False
        name = p.pred.name
        target = self.tentative_negatives if label == NEG else self.tentative_positives
        other = self.tentative_positives if label == NEG else self.tentative_negatives
        if p in target[name]:
            return False
        other[name].discard(p)
        target[name].add(p)
        return True

    def add_counterexample(self, c: Clause, cex: dict) -> int:
        new = 0
        for s in convert_counterexample(c, cex):
            if isinstance(s, ImplicationSample):
                self.add_implication(s)
            else:
                kind = "fact" if s.label == POS else "query"
                new += self.add_firm(s.point, s.label, Provenance(kind, Step(c, dict(cex))))
        return new

    def add_implication(self, s: ImplicationSample) -> None:
        for old in self.pending_implications:
            if old.key == s.key:
                old.stale = False
                return
        self.pending_implications.append(s)

    def clear_tentative(self) -> None:
        for n in self.predicates:
            self.tentative_negatives[n].clear()
            self.tentative_positives[n].clear()
        for s in self.pending_implications:
            s.stale = True

    # -- views ------------------------------------------------------------

    def training(self, pred: Predicate | str) -> tuple[list[tuple], list[tuple]]:
        """Positive and negative value tuples the learner must separate:
        firm samples (queue-limited) plus tentative ones."""
        name = pred if isinstance(pred, str) else pred.name
        pos = [p.values for p in self.positives[name]]
        neg = [p.values for p in self.negatives[name]]
        pos += [p.values for p in sorted(self.tentative_positives[name], key=_key)]
        neg += [p.values for p in sorted(self.tentative_negatives[name], key=_key)]
        return pos, neg

    def firm_count(self) -> int:
        return len(self.labels)

    def dump(self) -> str:
        lines = []
        for p in self._order:
            lines.append(f"{p.pred.name} {self.labels[p]} {p.values}")
        for n in self.predicates:
            for p in sorted(self.tentative_positives[n], key=_key):
                lines.append(f"{n} tentative-pos {p.values}")
            for p in sorted(self.tentative_negatives[n], key=_key):
                lines.append(f"{n} tentative-neg {p.values}")
        return "\n".join(lines)

    # -- provenance -------------------------------------------------------

    def forward(self, p: DataPoint, zm: ZoneMap | None, backend: smt.Backend) -> list[Step]:
        """Ground steps deriving the positive point p from facts."""
        prov = self.provenance[p]
        if prov.kind == "zone":
            return derive_safe(zm, p.pred, p.values, backend)
        steps: list[Step] = []
        for q in prov.sources:
            steps += self.forward(q, zm, backend)
        return steps + [prov.step]

    def backward(self, p: DataPoint, zm: ZoneMap | None, backend: smt.Backend) -> list[Step]:
        """Ground steps that, starting from p, reach false."""
        prov = self.provenance[p]
        if prov.kind == "zone":
            return refute_unsafe(zm, p.pred, p.values, backend)
        if prov.kind == "query":
            return [prov.step]
        # backward: sources = (head or None marker omitted, *positive body points)
        head, others = prov.sources[0], prov.sources[1:]
        steps: list[Step] = []
        for q in others:
            steps += self.forward(q, zm, backend)
        steps.append(prov.step)
        if head is not None:
            steps += self.backward(head, zm, backend)
        return steps


def _key(p: DataPoint):
    return tuple((isinstance(v, bool), int(v)) for v in p.values)


def _zone_label(zm: ZoneMap | None, p: DataPoint, use_safe=True, use_unsafe=True) -> str | None:
    if zm is None:
        return None
    if use_safe and zm.safe(p.pred).contains(p.values) and not zm.safe(p.pred).empty:
        return POS
    if use_unsafe and zm.unsafe(p.pred).contains(p.values) and not zm.unsafe(p.pred).empty:
        return NEG
    return None


def resolve_implications(d: Dataset, zm: ZoneMap | None = None,
                         use_safe=True, use_unsafe=True) -> Dataset:
    """Propagate firm labels through pending implications until nothing
    changes, then mark what is still unresolved as tentative-negative.

    (i)  all body points positive          -> head positive
    (ii) head negative (or a query) and all
         body points but one positive       -> that one negative
    An implication with a positive head or a negative body point is
    satisfied and dropped."""
    changed = True
    while changed:
        changed = False
        keep = []
        for s in d.pending_implications:
            for p in s.points:
                if p not in d.labels:
                    lab = _zone_label(zm, p, use_safe, use_unsafe)
                    if lab is not None:
                        changed |= d.add_firm(p, lab, Provenance("zone"))
            head = s.head_point
            if (head is not None and d.is_pos(head)) or any(d.is_neg(b) for b in s.body_points):
                d.implications_resolved += 1
                changed = True
                continue
            if all(d.is_pos(b) for b in s.body_points) and head is not None:
                d.add_firm(head, POS, Provenance("forward", s.step, s.body_points))
                d.implications_resolved += 1
                changed = True
                continue
            if head is None or d.is_neg(head):
                rest = [b for b in s.body_points if not d.is_pos(b)]
                if len(rest) <= 1:
                    target = rest[0] if rest else s.body_points[-1]
                    others = tuple(b for b in s.body_points if b is not target)
                    d.add_firm(target, NEG, Provenance("backward", s.step, (head, *others)))
                    d.implications_resolved += 1
                    changed = True
                    continue
            keep.append(s)
        d.pending_implications = keep
    for s in d.pending_implications:
        if s.stale:
            continue
        for p in s.points:
            if p not in d.labels:
                d.add_tentative(p, NEG)
    return d


def check_conflicts(d: Dataset, zm: ZoneMap | None, use_safe=True, use_unsafe=True) -> ConflictWitness | None:
    """SampleSample first, then firm samples against the opposite zone.
    Tentative samples never count."""
    if d.conflicts:
        return d.conflicts[0][0]
    if zm is None:
        return None
    for p in d._order[d._zone_checked:]:
        lab = d.labels[p]
        if lab == POS and use_unsafe:
            z = zm.unsafe(p.pred)
            if not z.empty and z.contains(p.values):
                return ConflictWitness("SampleZone", p.pred, p.values)
        if lab == NEG and use_safe:
            z = zm.safe(p.pred)
            if not z.empty and z.contains(p.values):
                return ConflictWitness("SampleZone", p.pred, p.values)
        d._zone_checked += 1
    return None


def sample_from_zone(z: Zone, d: Dataset, backend: smt.Backend) -> DataPoint | None:
    """A model of the zone not yet stored with the zone's polarity."""
    if z.empty:
        return None
    label = POS if z.polarity == SAFE else NEG
    vs = z.pred.canonical_vars
    avoid = []
    for p, lab in d.labels.items():
        if lab != label or p.pred.name != z.pred.name:
            continue
        if not vs:
            return None
        avoid.append(z3.Or([v != smt.value_expr(x, v.sort()) for v, x in zip(vs, p.values)]))
    try:
        v = backend.check(smt.mk_and([z.formula, *avoid]), vs)
    except smt.Timeout:
        raise
    if not v.is_sat:
        return None
    return DataPoint(z.pred, tuple(v.model[x.decl().name()] for x in vs))


def witness_steps(d: Dataset, w: ConflictWitness, zm: ZoneMap | None, backend: smt.Backend,
                  use_safe=True, use_unsafe=True) -> list[Step]:
    """A ground derivation from facts through w's point to false."""
    p = DataPoint(w.pred, tuple(w.point))
    if w.kind == "ZoneZone":
        return derive_safe(zm, p.pred, p.values, backend) + refute_unsafe(zm, p.pred, p.values, backend)
    if w.kind == "SampleSample":
        first = d.labels[p]
        prov2 = next(pr for c, pr in d.conflicts if c is w)
        if first == POS:
            pos = d.forward(p, zm, backend)
            saved = d.provenance[p]
            d.provenance[p] = prov2
            try:
                neg = d.backward(p, zm, backend)
            finally:
                d.provenance[p] = saved
        else:
            neg = d.backward(p, zm, backend)
            saved = d.provenance[p]
            d.provenance[p] = prov2
            try:
                pos = d.forward(p, zm, backend)
            finally:
                d.provenance[p] = saved
        return pos + neg
    if w.kind == "SampleZone":
        if d.labels[p] == POS:
            return d.forward(p, zm, backend) + refute_unsafe(zm, p.pred, p.values, backend)
        return derive_safe(zm, p.pred, p.values, backend) + d.backward(p, zm, backend)
    raise ValueError(f"no derivation for {w.kind}")
