"""The guess-and-check loop: hypotheses from zones and learned partitions,
counterexamples from the SMT teacher, dataset updates, and verdicts."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import z3

from . import smt
from .dataset import (NEG, POS, Dataset, DataPoint, Provenance, QueueMode,
                      check_conflicts, resolve_implications, sample_from_zone,
                      witness_steps)
from .features import find_mod_patterns
from .learner import LearnerFailure, learn_partition
from .model import ChcSystem, Clause, Predicate
from .reasoner import (DerivationError, ReasonerConfig, Step, ZoneMap,
                       expand_zones, init_zones, zone_conflict)
from .svm import SvmConfig

log = logging.getLogger(__name__)


class Strategy(enum.Enum):
    S = "s"
    L = "l"
    LU = "lu"
    SL = "sl"
    SLU = "slu"


ROTATION = [Strategy.SLU, Strategy.SL, Strategy.LU, Strategy.L, Strategy.S]


@dataclass
class Scheduler:
    """Fixed strategy, or rotate SLU -> SL -> LU -> L -> S after
    `rotate_on_stall` consecutive iterations without a new firm sample."""

    kind: Strategy = Strategy.SLU
    rotate_on_stall: int | None = None
    stalled: int = 0

    def observe(self, new_firm: int) -> Strategy:
        if new_firm:
            self.stalled = 0
            return self.kind
        self.stalled += 1
        if self.rotate_on_stall and self.stalled >= self.rotate_on_stall:
            self.rotate()
        return self.kind

    def rotate(self) -> Strategy:
        i = ROTATION.index(self.kind)
        self.kind = ROTATION[(i + 1) % len(ROTATION)]
        self.stalled = 0
        return self.kind


def schedule_strategy(s: Scheduler, new_firm: int = 0) -> Strategy:
    return s.observe(new_firm)


class HypothesisUndecided(Exception):
    def __init__(self, clause: Clause, reason: str):
        super().__init__(f"{clause.label}: {reason}")
        self.clause = clause
        self.reason = reason


@dataclass
class EngineConfig:
    strategy: Strategy = Strategy.SLU
    rotate_on_stall: int | None = None
    use_safe: bool = True
    use_unsafe: bool = True
    no_learner: bool = False
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    queue: QueueMode | None = None
    tentative_clear_period: int = 10
    batch_size: int = 1
    update_once: bool = False
    inner_cap: int = 200
    sample_zones: bool = True
    timeout_s: float | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class UnsatWitness:
    kind: str
    pred: Predicate | None
    point: tuple
    derivation: list[Step]


@dataclass
class SolveResult:
    verdict: str  # sat | unsat | unknown
    interp: dict[str, z3.ExprRef] | None = None
    witness: UnsatWitness | None = None
    reason: str = ""
    stats: dict = field(default_factory=dict)
    strategy: Strategy | None = None

    @property
    def solved(self) -> bool:
        return self.verdict in ("sat", "unsat")


def make_hypothesis(pred: Predicate, zm: ZoneMap | None, part: z3.ExprRef,
                    strat: Strategy, use_safe=True, use_unsafe=True) -> z3.ExprRef:
    s = zm.safe(pred).formula if zm is not None and use_safe else smt.FALSE
    u = zm.unsafe(pred).formula if zm is not None and use_unsafe else smt.FALSE
    if strat is Strategy.S:
        return s
    if strat is Strategy.L:
        return part
    if strat is Strategy.LU:
        return smt.mk_and([part, smt.mk_not(u)])
    if strat is Strategy.SL:
        return smt.mk_or([s, part])
    return smt.mk_or([s, smt.mk_and([part, smt.mk_not(u)])])


def interpreted(c: Clause, interp: dict) -> z3.ExprRef:
    """The negation of the clause under `interp` (satisfiable iff the
    interpretation violates the clause)."""
    parts = [c.constraint]
    parts += [a.instantiate(interp[a.pred.name]) for a in c.body]
    if c.head is not None:
        parts.append(smt.mk_not(c.head.instantiate(interp[c.head.pred.name])))
    return smt.mk_and(parts)


def _refutes(c: Clause, interp: dict, cex: dict) -> bool:
    f = interpreted(c, interp)
    try:
        return bool(smt.evaluate(f, cex))
    except (KeyError, ValueError, ZeroDivisionError):
        return True  # cannot re-evaluate independently; trust the backend


def check_clause(c: Clause, interp: dict, backend: smt.Backend, extra=()) -> smt.SatVerdict:
    return backend.check(smt.mk_and([interpreted(c, interp), *extra]), c.all_vars)


def check_hypothesis(h: ChcSystem, interp: dict, backend: smt.Backend):
    """None if `interp` satisfies every clause, else (clause, counterexample)."""
    for c in h.clauses:
        v = check_clause(c, interp, backend)
        if v.is_sat:
            if not _refutes(c, interp, v.model):
                raise smt.BackendError(f"model for {c.label} does not refute it")
            return c, v.model
        if not v.is_unsat:
            raise HypothesisUndecided(c, v.reason)
    return None


def _block(c: Clause, cex: dict) -> z3.ExprRef:
    """Disequality excluding cex on the clause's predicate-argument variables."""
    xs = [a for app in c.apps for a in app.args]
    if not xs:
        xs = c.all_vars
    if not xs:
        return smt.FALSE
    return z3.Or([x != smt.value_expr(cex[x.decl().name()], x.sort()) for x in xs])


def replay(h: ChcSystem, w: UnsatWitness) -> bool:
    """Check a witness derivation step by step: every constraint holds
    under its assignment, body points were derived earlier, and the last
    step is a query."""
    if not w.derivation:
        return False
    derived: set[tuple[str, tuple]] = set()
    for k, st in enumerate(w.derivation):
        c, a = st.clause, st.assignment
        if not any(c is d for d in h.clauses):
            return False
        if any(x.decl().name() not in a for x in c.all_vars):
            return False
        if not smt.holds_at(c.constraint, c.all_vars, [a[x.decl().name()] for x in c.all_vars]):
            return False
        for app in c.body:
            pt = (app.pred.name, tuple(a[x.decl().name()] for x in app.args))
            if pt not in derived:
                return False
        if c.head is None:
            return k == len(w.derivation) - 1
        derived.add((c.head.pred.name, tuple(a[x.decl().name()] for x in c.head.args)))
    return False


def full_interpretation(h: ChcSystem, interp: dict) -> dict:
    out = dict(interp)
    for name, value in h.fixed.items():
        out[name] = smt.TRUE if value else smt.FALSE
    return out


class _Run:
    def __init__(self, h: ChcSystem, cfg: EngineConfig, backend: smt.Backend):
        self.h, self.cfg, self.backend = h, cfg, backend
        self.sched = Scheduler(cfg.strategy, cfg.rotate_on_stall)
        self.stats = {"iterations": 0, "counterexamples": 0, "epochs": 0,
                      "zone_samples": 0, "strategy_switches": 0, "learner_s": 0.0}
        self.zm: ZoneMap | None = None
        self.d = Dataset(h.predicates.values(), cfg.queue, cfg.tentative_clear_period)
        self.parts = {n: smt.TRUE for n in h.predicates}
        self._train_sig: dict[str, tuple] = {}
        self.mod_ks = find_mod_patterns(h)

    def hypothesis(self) -> dict:
        c = self.cfg
        return {n: make_hypothesis(p, self.zm, self.parts[n], self.sched.kind, c.use_safe, c.use_unsafe)
                for n, p in self.h.predicates.items()}

    def relearn(self) -> None:
        t0 = time.monotonic()
        for n, p in self.h.predicates.items():
            pos, neg = self.d.training(p)
            sig = (tuple(pos), tuple(neg))
            if self._train_sig.get(n) == sig:
                continue
            self._train_sig[n] = sig
            self.parts[n] = learn_partition(p, pos, neg, self.cfg.svm, self.mod_ks).formula
        self.stats["learner_s"] += time.monotonic() - t0

    def unsat(self, w) -> SolveResult:
        try:
            steps = witness_steps(self.d, w, self.zm, self.backend, self.cfg.use_safe, self.cfg.use_unsafe)
        except (DerivationError, KeyError) as e:
            log.warning("could not build a derivation for %s: %s", w.kind, e)
            return self.result("unknown", reason=f"witness construction failed ({w.kind})")
        return self.result("unsat", witness=UnsatWitness(w.kind, w.pred, tuple(w.point), steps))

    def result(self, verdict, **kw) -> SolveResult:
        st = dict(self.stats)
        st["implications_resolved"] = self.d.implications_resolved
        st["firm_samples"] = self.d.firm_count()
        st["smt_calls"] = self.backend.calls
        st["qe"] = dict(self.backend.qe_log)
        if self.zm is not None:
            st["zone_sizes"] = {f"{z.pred.name}/{z.polarity}": smt.size(z.formula) for z in self.zm}
            st["zones_frozen"] = sorted(f"{z.pred.name}/{z.polarity}:{z.freeze_reason}" for z in self.zm if z.frozen)
            st["clauses_skipped"] = sorted(set(self.zm.skipped))
        return SolveResult(verdict, stats=st, strategy=self.sched.kind, **kw)

    def sample_zones(self) -> None:
        cfg = self.cfg
        for z in self.zm:
            if z.empty or (z.polarity == "safe" and not cfg.use_safe) or (z.polarity == "unsafe" and not cfg.use_unsafe):
                continue
            p = sample_from_zone(z, self.d, self.backend)
            if p is not None:
                self.d.add_firm(p, POS if z.polarity == "safe" else NEG, Provenance("zone"))
                self.stats["zone_samples"] += 1

    def run(self) -> SolveResult:
        h, cfg, b = self.h, self.cfg, self.backend
        for c in h.clauses:
            if c.kind.is_trivial:
                v = b.check(c.constraint, c.all_vars)
                if v.is_sat:
                    return self.result("unsat", witness=UnsatWitness("TrivialClause", None, (), [Step(c, v.model)]))
        if not h.queries:
            interp = {n: smt.TRUE for n in h.predicates}
            return self.result("sat", interp=interp)
        self.zm = init_zones(h, b, cfg.reasoner)
        expand_zones(self.zm, cfg.reasoner, b)
        w = zone_conflict(self.zm, b, cfg.use_safe, cfg.use_unsafe)
        if w is not None:
            return self.unsat(w)
        if cfg.no_learner:
            interp = {n: make_hypothesis(p, self.zm, smt.TRUE, Strategy.S, cfg.use_safe, cfg.use_unsafe)
                      for n, p in h.predicates.items()}
            try:
                fail = check_hypothesis(h, interp, b)
            except HypothesisUndecided as e:
                return self.result("unknown", reason=f"backend unknown: {e.reason}")
            if fail is None:
                return self.result("sat", interp=interp)
            return self.result("unknown", reason="reasoner alone is inconclusive")
        return self.loop()

    def loop(self) -> SolveResult:
        h, cfg, b, d = self.h, self.cfg, self.backend, self.d
        clauses = [c for c in h.clauses if not c.kind.is_trivial]
        undecided_run = 0
        while True:
            self.stats["epochs"] += 1
            if cfg.sample_zones:
                self.sample_zones()
                resolve_implications(d, self.zm, cfg.use_safe, cfg.use_unsafe)
                w = check_conflicts(d, self.zm, cfg.use_safe, cfg.use_unsafe)
                if w is not None:
                    return self.unsat(w)
                self.relearn()
            interp = self.hypothesis()
            clean = True
            blocked: dict[int, list] = {}
            for c in clauses:
                inner = 0
                while True:
                    v = check_clause(c, interp, b, blocked.get(id(c), ()))
                    if not v.is_sat and not v.is_unsat:
                        undecided_run += 1
                        if undecided_run >= len(ROTATION):
                            return self.result("unknown", reason=f"backend unknown: {v.reason}")
                        self.sched.rotate()
                        self.stats["strategy_switches"] += 1
                        interp = self.hypothesis()
                        clean = False
                        continue
                    undecided_run = 0
                    if v.is_unsat:
                        if blocked.get(id(c)):
                            clean = False  # only the blocked points may still fail
                        break
                    clean = False
                    new = self.harvest(c, interp, v.model, blocked)
                    w = check_conflicts(d, self.zm, cfg.use_safe, cfg.use_unsafe)
                    if w is not None:
                        return self.unsat(w)
                    self.stats["iterations"] += 1
                    it = self.stats["iterations"]
                    if it % cfg.tentative_clear_period == 0:
                        d.clear_tentative()
                        resolve_implications(d, self.zm, cfg.use_safe, cfg.use_unsafe)
                    try:
                        self.relearn()
                    except LearnerFailure as e:
                        return self.result("unknown", reason=f"learner: {e}")
                    before = self.sched.kind
                    if schedule_strategy(self.sched, new) is not before:
                        self.stats["strategy_switches"] += 1
                    interp = self.hypothesis()
                    if cfg.max_iterations is not None and it >= cfg.max_iterations:
                        return self.result("unknown", reason="iteration limit")
                    inner += 1
                    if cfg.update_once or inner >= cfg.inner_cap:
                        break
            if clean:
                return self.finish(interp)

    def harvest(self, c: Clause, interp: dict, first: dict, blocked: dict) -> int:
        """Add a batch of counterexamples of c to the dataset; returns the
        number of new firm labels."""
        cfg, b, d = self.cfg, self.backend, self.d
        cexs = [first]
        if not _refutes(c, interp, first):
            raise smt.BackendError(f"model for {c.label} does not refute it")
        extra = list(blocked.get(id(c), ()))
        while len(cexs) < cfg.batch_size:
            extra.append(_block(c, cexs[-1]))
            v = check_clause(c, interp, b, extra)
            if not v.is_sat:
                break
            cexs.append(v.model)
        firm_before = d.firm_count()
        for cex in cexs:
            self.stats["counterexamples"] += 1
            d.add_counterexample(c, cex)
            if not c.kind.is_fact and not (c.kind.is_query and len(c.body) == 1):
                blocked.setdefault(id(c), []).append(_block(c, cex))
        resolve_implications(d, self.zm, cfg.use_safe, cfg.use_unsafe)
        return d.firm_count() - firm_before

    def finish(self, interp: dict) -> SolveResult:
        try:
            fail = check_hypothesis(self.h, interp, self.backend)
        except HypothesisUndecided as e:
            return self.result("unknown", reason=f"backend unknown: {e.reason}")
        if fail is not None:  # pragma: no cover - the loop just checked every clause
            return self.result("unknown", reason="final check failed")
        interp = {n: self.backend.simplify(f) for n, f in interp.items()}
        return self.result("sat", interp=interp)


def solve(h: ChcSystem, cfg: EngineConfig | None = None, backend: smt.Backend | None = None) -> SolveResult:
    """Decide a normalized system."""
    cfg = cfg or EngineConfig()
    backend = backend or smt.Backend()
    t0 = time.monotonic()
    if cfg.timeout_s is not None:
        backend.deadline = t0 + cfg.timeout_s
    run = _Run(h, cfg, backend)
    try:
        if cfg.timeout_s is not None and cfg.timeout_s <= 0:
            raise smt.Timeout()
        res = run.run()
    except smt.Timeout:
        res = run.result("unknown", reason="timeout")
    except smt.BackendError as e:
        res = run.result("unknown", reason=f"backend error: {e}")
    res.stats["time_s"] = time.monotonic() - t0
    if res.verdict == "sat":
        res.interp = full_interpretation(h, res.interp)
    return res
