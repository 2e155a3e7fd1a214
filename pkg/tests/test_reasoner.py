import z3

from chclearn import smt
from chclearn.dataset import Dataset, witness_steps
from chclearn.engine import UnsatWitness, replay
from chclearn.reasoner import (ReasonerConfig, ZoneMap, backward_expand,
                               derive_safe, expand_zones, forward_expand,
                               init_zones, refute_unsafe, zone_conflict)
from helpers import horn, load, system

v0, v1, v2, v3, v4 = z3.Ints("v0 v1 v2 v3 v4")
CFG = ReasonerConfig()

OVERLAP = horn([("p", ["Int"])],
               "(forall ((x Int)) (=> (= x 0) (p x)))",
               "(forall ((x Int)) (=> (and (p x) (= x 0)) false))")


def _rule(h):
    return next(c for c in h.clauses if c.kind.is_rule and not c.kind.is_fact)


def test_h0_initial_zones(h0, backend):
    zm = init_zones(h0, backend)
    s0 = z3.And(z3.Not(v0 <= 0), v1 <= v0, v2 == 0, v3 == 0, v4 == 0)
    assert backend.equivalent(zm.safe("inv").formula, s0)
    assert backend.equivalent(zm.unsafe("inv").formula, z3.Not(v4 >= v0 * v2))


def test_nonlinear_query_gives_no_unsafe_zone(backend):
    h = system(horn([("p", ["Int"]), ("q", ["Int"])],
                    "(forall ((x Int)) (=> (= x 0) (p x)))",
                    "(forall ((x Int)) (=> (= x 1) (q x)))",
                    "(forall ((x Int) (y Int)) (=> (and (p x) (q y) (> x y)) false))"), backend)
    zm = init_zones(h, backend)
    assert zm.unsafe("p").empty and zm.unsafe("q").empty
    assert not zm.safe("p").empty


def test_h0_forward_through_c1(h0, backend):
    zm = init_zones(h0, backend)
    forward_expand(zm, _rule(h0), CFG, backend)
    z = zm.safe("inv")
    assert len(z.entries) == 2 and z.depth == 1
    want = z3.And(z3.Not(v0 <= 0), v1 <= v0, v2 == 1, v3 == v0, v4 == v1)
    assert backend.equivalent(z.entries[-1].formula, want)


def test_forward_from_empty_zone_is_noop(backend):
    h = system(horn([("p", ["Int"]), ("q", ["Int"])],
                    "(forall ((x Int)) (=> (= x 0) (p x)))",
                    "(forall ((x Int)) (=> (q x) (p (+ x 1))))",
                    "(forall ((x Int)) (=> (q x) (q (+ x 2))))",
                    "(forall ((x Int)) (=> (and (p x) (> x 3)) false))"), backend)
    zm = init_zones(h, backend)
    assert zm.safe("q").empty
    before = zm.safe("p").formula
    r = next(c for c in h.clauses if c.body and c.head is not None and c.head.pred.name == "p")
    forward_expand(zm, r, CFG, backend)
    assert zm.safe("p").formula.eq(before) and zm.version == 2


def test_h0_backward_through_c1(h0, backend):
    zm = init_zones(h0, backend)
    backward_expand(zm, _rule(h0), CFG, backend)
    z = zm.unsafe("inv")
    assert len(z.entries) == 2
    assert backend.equivalent(z.entries[-1].formula, z3.Not(v4 + v1 >= v0 * (v2 + 1)))


def test_backward_from_empty_head_zone_is_noop(backend):
    h = load("counter_sat.smt2", backend)
    zm = ZoneMap(h)
    backward_expand(zm, _rule(h), CFG, backend)
    assert zm.unsafe("p").empty and zm.version == 0


def test_backward_ignores_nonlinear_rule(backend):
    h = load("join_unsat.smt2", backend)
    zm = init_zones(h, backend)
    nl = [c for c in h.clauses if len(c.body) == 2 and c.head is not None]
    assert nl
    snap = zm.snapshot()
    backward_expand(zm, nl[0], CFG, backend)
    assert all(zm.snapshot()[k].eq(f) for k, f in snap.items())


def test_zone_conflict_identical_zones(backend):
    h = system(OVERLAP, backend)
    zm = init_zones(h, backend)
    w = zone_conflict(zm, backend)
    assert w is not None and w.kind == "ZoneZone" and w.point == (0,)


def test_h0_initial_zones_do_not_overlap(h0, backend):
    assert zone_conflict(init_zones(h0, backend), backend) is None


def test_no_zones_no_conflict(h0, backend):
    assert zone_conflict(ZoneMap(h0), backend) is None


def test_zone_conflict_disabled_without_both_zones(backend):
    zm = init_zones(system(OVERLAP, backend), backend)
    assert zone_conflict(zm, backend, use_safe=False) is None


def test_expansion_is_monotone_and_witness_is_in_both(backend):
    for name in ("counter_unsat.smt2", "two_pred_unsat.smt2", "nonlin_mult_2.smt2"):
        h = load(name, backend)
        zm = init_zones(h, backend)
        rules = [c for c in h.clauses if not c.kind.is_fact and not c.kind.is_query]
        for _ in range(3):
            for r in rules:
                for step in (forward_expand, backward_expand):
                    old = zm.snapshot()
                    step(zm, r, CFG, backend)
                    for k, f in zm.snapshot().items():
                        assert backend.is_valid(z3.Implies(old[k], f))
        w = zone_conflict(zm, backend)
        if w is not None:
            s, u = zm.safe(w.pred), zm.unsafe(w.pred)
            assert s.contains(w.point) and u.contains(w.point)


def test_frozen_zone_is_bit_identical(backend):
    h = load("counter_unsat.smt2", backend)
    zm = init_zones(h, backend)
    z = zm.safe("p")
    z.frozen = True
    before = z.formula
    expand_zones(zm, CFG, backend)
    assert z.formula.eq(before)


def test_expansion_stops_at_fixpoint(backend):
    h = load("bounded_sat.dl", backend)
    zm = expand_zones(init_zones(h, backend), ReasonerConfig(max_rounds=50), backend)
    assert max(z.depth for z in zm) < 50


def test_zone_derivations_replay(backend):
    h = load("counter_unsat.smt2", backend)
    zm = expand_zones(init_zones(h, backend), CFG, backend)
    p = h.predicates["p"]
    s = zm.safe(p)
    v = backend.check(s.formula, p.canonical_vars)
    pt = (v.model["v0"],)
    steps = derive_safe(zm, p, pt, backend)
    assert steps[0].clause.kind.is_fact and steps[-1].clause.head.pred is p
    u = zm.unsafe(p)
    v = backend.check(u.formula, p.canonical_vars)
    pt = (v.model["v0"],)
    down = refute_unsafe(zm, p, pt, backend)
    assert down[-1].clause.kind.is_query
    # a safe point and an unsafe point never chain, but each half is well formed
    for st in steps + down:
        vals = [st.assignment[x.decl().name()] for x in st.clause.all_vars]
        assert smt.holds_at(st.clause.constraint, st.clause.all_vars, vals)


def test_zone_zone_witness_replays(backend):
    h = load("zone_overlap_unsat.smt2", backend)
    zm = expand_zones(init_zones(h, backend), CFG, backend)
    w = zone_conflict(zm, backend)
    steps = witness_steps(Dataset(h.predicates.values()), w, zm, backend)
    assert replay(h, UnsatWitness(w.kind, w.pred, w.point, steps))
