import pytest
import z3

from chclearn import frontend, smt
from helpers import DATA, H0_TEXT, horn

DATALOG = """
(declare-rel inv (Int))
(declare-rel err ())
(declare-var x Int)
(rule (=> (= x 0) (inv x)))
(rule (=> (and (inv x) (> x 5)) err))
(query err)
"""


def test_h0_parses_to_one_predicate_three_clauses():
    h = frontend.parse(H0_TEXT)
    assert list(h.predicates) == ["inv"]
    assert h.predicates["inv"].arity == 5
    assert len(h.clauses) == 3


def test_datalog_rule_query_program():
    h = frontend.parse(DATALOG)
    assert frontend.detect_format(DATALOG) is frontend.InputFormat.DATALOG
    assert len(h.facts) == 1 and h.facts[0].head.pred.name == "inv"
    assert len(h.queries) == 1 and h.queries[0].body[0].pred.name == "err"


def test_real_sort_is_unsupported():
    with pytest.raises(frontend.UnsupportedTheory):
        frontend.parse(horn([("p", ["Real"])], "(forall ((x Real)) (=> (= x 0.0) (p x)))"))


def test_array_sort_is_unsupported():
    with pytest.raises(frontend.UnsupportedTheory):
        frontend.parse("(set-logic HORN)\n(declare-fun p ((Array Int Int)) Bool)\n")


def test_uninterpreted_function_is_unsupported():
    with pytest.raises(frontend.UnsupportedTheory):
        frontend.parse("(set-logic HORN)\n(declare-fun f (Int) Int)\n(declare-fun p (Int) Bool)\n")


def test_garbage_is_a_parse_error():
    with pytest.raises(frontend.ParseError):
        frontend.parse("(set-logic HORN)\n(assert (forall ((x Int)) (=> (= x 0) (p x)))")


def test_negated_query_form_is_a_query():
    t = horn([("p", ["Int"])],
             "(forall ((x Int)) (=> (= x 0) (p x)))",
             "(forall ((x Int)) (not (and (p x) (> x 3))))")
    h = frontend.parse(t)
    assert len(h.queries) == 1


def test_boolean_arguments():
    h = frontend.parse_file(DATA / "bool_sat.smt2")
    sorts = {s.value for p in h.predicates.values() for s in p.arg_sorts}
    assert "Bool" in sorts


def test_parse_twice_is_equal():
    a, b = frontend.parse(H0_TEXT), frontend.parse(H0_TEXT)
    assert str(a) == str(b)
    assert frontend.to_smtlib2(a) == frontend.to_smtlib2(b)


def _alpha_equal(c1, c2) -> bool:
    s = z3.Solver()
    s.set("timeout", 20000)
    s.add(z3.Not(c1.as_z3() == c2.as_z3()))
    return s.check() == z3.unsat


@pytest.mark.parametrize("path", sorted(p.name for p in DATA.iterdir()))
def test_round_trip_alpha_equivalent(path):
    h = frontend.parse_file(DATA / path)
    again = frontend.parse(frontend.to_smtlib2(h))
    assert set(again.predicates) == set(h.predicates)
    assert len(again.clauses) == len(h.clauses)
    for c1, c2 in zip(h.clauses, again.clauses):
        assert _alpha_equal(c1, c2), f"{c1} vs {c2}"


def test_parse_leaves_no_global_declarations():
    before = smt.size(z3.Int("inv") + 1)
    frontend.parse(H0_TEXT)
    assert smt.size(z3.Int("inv") + 1) == before
