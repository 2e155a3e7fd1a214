import pytest
import z3

from chclearn import engine, smt
from chclearn.dataset import Dataset, QueueMode
from chclearn.engine import (EngineConfig, Scheduler, Strategy, check_hypothesis,
                             make_hypothesis, replay, schedule_strategy, solve)
from chclearn.learner import learn_partition
from chclearn.reasoner import ZoneMap
from helpers import horn, load, system
from oracle import has_refutation

OVERLAP = horn([("p", ["Int"])],
               "(forall ((x Int)) (=> (= x 0) (p x)))",
               "(forall ((x Int)) (=> (and (p x) (= x 0)) false))")
GUARD = horn([("p", ["Int"])],
             "(forall ((x Int)) (=> (= x 0) (p x)))",
             "(forall ((x Int)) (=> (and (p x) (> x 5)) false))")


def _zones(h, s, u):
    zm = ZoneMap(h)
    zm.safe("p").formula, zm.unsafe("p").formula = s, u
    return zm


def test_hypothesis_shapes(backend):
    h = system(GUARD)
    p = h.predicates["p"]
    A, B, C = z3.Bools("A B C")
    zm = _zones(h, A, C)
    assert backend.equivalent(make_hypothesis(p, zm, B, Strategy.SLU), z3.Or(A, z3.And(B, z3.Not(C))))
    assert make_hypothesis(p, zm, B, Strategy.L).eq(B)
    assert backend.equivalent(make_hypothesis(p, zm, B, Strategy.LU), z3.And(B, z3.Not(C)))
    assert backend.equivalent(make_hypothesis(p, zm, B, Strategy.SL), z3.Or(A, B))
    assert make_hypothesis(p, zm, B, Strategy.S).eq(A)


def test_empty_zones_reduce_slu_to_partition():
    h = system(GUARD)
    B = z3.Bool("B")
    assert make_hypothesis(h.predicates["p"], ZoneMap(h), B, Strategy.SLU).eq(B)


def test_h0_weak_candidate_fails_on_c1(h0, backend):
    v3 = z3.Int("v3")
    c, cex = check_hypothesis(h0, {"inv": v3 <= 1}, backend)
    assert c is h0.clauses[1]
    assert smt.evaluate(engine.interpreted(c, {"inv": v3 <= 1}), cex) is True


def test_exact_candidate_passes(backend):
    h = system(GUARD)
    assert check_hypothesis(h, {"p": z3.Int("v0") == 0}, backend) is None


def test_top_fails_a_satisfiable_query(backend):
    h = system(GUARD)
    c, _ = check_hypothesis(h, {"p": smt.TRUE}, backend)
    assert c.kind.is_query


def test_overlap_unsat_before_learning():
    res = solve(system(OVERLAP), EngineConfig(timeout_s=30))
    assert res.verdict == "unsat" and res.witness.kind == "ZoneZone"
    assert res.witness.point == (0,) and res.stats["iterations"] == 0


def test_counter_sat_interp_bounds_x():
    h = load("counter_sat.smt2")
    res = solve(h, EngineConfig(timeout_s=60))
    assert res.verdict == "sat"
    b = smt.Backend()
    assert check_hypothesis(h, res.interp, b) is None
    v0 = z3.Int("v0")
    assert b.is_valid(z3.Implies(res.interp["p"], v0 > 100)) is False
    assert b.is_valid(z3.Implies(res.interp["p"], v0 <= 100))


def test_h0_matches_oracle():
    h = load("nonlin_mult_2.smt2")
    res = solve(h, EngineConfig(timeout_s=60))
    assert res.verdict == ("unsat" if has_refutation(h, 5) else "sat")
    if res.verdict == "unsat":
        assert replay(h, res.witness)


def test_trivial_false_clause_is_unsat():
    h = system(horn([("p", ["Int"])],
                    "(forall ((x Int)) (=> (= x 0) (p x)))",
                    "(forall ((x Int)) (=> (and (p x) (> x 5)) false))",
                    "(forall ((y Int)) (=> (= y 3) false))"))
    res = solve(h)
    assert res.verdict == "unsat" and res.witness.kind == "TrivialClause"
    assert replay(h, res.witness)


def test_no_queries_is_sat():
    h = system(horn([("p", ["Int"])], "(forall ((x Int)) (=> (= x 0) (p x)))"))
    assert solve(h).verdict == "sat"


def test_fixed_scheduler():
    s = Scheduler(Strategy.SLU)
    for _ in range(20):
        assert schedule_strategy(s, 0) is Strategy.SLU


def test_rotate_on_stall():
    s = Scheduler(Strategy.SLU, rotate_on_stall=5)
    for _ in range(4):
        assert schedule_strategy(s, 0) is Strategy.SLU
    assert schedule_strategy(s, 0) is Strategy.SL
    assert schedule_strategy(s, 1) is Strategy.SL and s.stalled == 0


def test_rotation_order_wraps():
    s = Scheduler(Strategy.SLU)
    assert [s.rotate() for _ in range(5)] == [Strategy.SL, Strategy.LU, Strategy.L, Strategy.S, Strategy.SLU]


def test_reasoner_only():
    assert solve(system(OVERLAP), EngineConfig(no_learner=True)).verdict == "unsat"
    res = solve(load("counter_sat.smt2"), EngineConfig(no_learner=True))
    assert res.verdict == "unknown" and "reasoner" in res.reason


def test_backend_unknown_rotates_then_gives_up(monkeypatch):
    calls = []

    def undecided(c, interp, backend, extra=()):
        calls.append(c)
        return smt.SatVerdict("unknown", reason="stub")

    monkeypatch.setattr(engine, "check_clause", undecided)
    res = solve(load("counter_sat.smt2"), EngineConfig(timeout_s=30))
    assert res.verdict == "unknown" and "stub" in res.reason
    assert res.stats["strategy_switches"] == len(engine.ROTATION) - 1


def test_timeout_is_unknown():
    h = load("counter_sat.smt2")
    res = solve(h, EngineConfig(timeout_s=1e-6))
    assert res.verdict == "unknown" and res.reason == "timeout"


@pytest.mark.parametrize("cfg", [
    EngineConfig(batch_size=3),
    EngineConfig(update_once=True),
    EngineConfig(queue=QueueMode(50, 50)),
    EngineConfig(rotate_on_stall=3),
    EngineConfig(strategy=Strategy.L, use_safe=False, use_unsafe=False),
])
def test_config_variants_still_solve(cfg):
    cfg.timeout_s = 60
    h = load("counter_sat.smt2")
    res = solve(h, cfg)
    assert res.verdict == "sat"
    assert check_hypothesis(h, res.interp, smt.Backend()) is None


def test_batch_counterexamples_are_distinct(h0, backend):
    c = h0.clauses[2]
    interp = {"inv": smt.TRUE}
    v = engine.check_clause(c, interp, backend)
    block = engine._block(c, v.model)
    w = engine.check_clause(c, interp, backend, [block])
    pt = lambda m: tuple(m[a.decl().name()] for a in c.body[0].args)  # noqa: E731
    assert w.is_sat and pt(w.model) != pt(v.model)


def test_query_counterexample_not_repeated_under_l(h0, backend):
    d = Dataset(h0.predicates.values())
    inv = h0.predicates["inv"]
    interp = {"inv": smt.TRUE}
    for c in (h0.clauses[2], h0.clauses[0], h0.clauses[2]):
        v = engine.check_clause(c, interp, backend)
        if not v.is_sat:
            continue
        d.add_counterexample(c, v.model)
        pos, neg = d.training(inv)
        interp = {"inv": learn_partition(inv, pos, neg).formula}
        again = engine.check_clause(c, interp, backend)
        app = c.head if c.head is not None else c.body[0]
        point = lambda m: tuple(m[a.decl().name()] for a in app.args)  # noqa: E731
        assert not again.is_sat or point(again.model) != point(v.model)


def test_same_seed_same_run():
    h1, h2 = load("converge_sat.smt2"), load("converge_sat.smt2")
    a = solve(h1, EngineConfig(timeout_s=60), smt.Backend(seed=3))
    b = solve(h2, EngineConfig(timeout_s=60), smt.Backend(seed=3))
    assert a.verdict == b.verdict
    assert a.stats["iterations"] == b.stats["iterations"]
    assert {k: f.sexpr() for k, f in a.interp.items()} == {k: f.sexpr() for k, f in b.interp.items()}


def test_engine_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(batch_size=0)
