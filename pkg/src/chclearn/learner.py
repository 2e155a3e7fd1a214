"""Partition learning for one predicate: SVM planes, attribute templates,
a decision tree, and the tree's DNF."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import z3

from . import smt
from .features import Attribute, generate_attributes
from .model import Predicate, Sort
from .svm import DegenerateData, Hyperplane, SvmConfig, fit_svm
from .tree import Node, UnseparableData, induce_tree, tree_to_formula

log = logging.getLogger(__name__)

UNSEPARABLE_RETRIES = 3


class LearnerFailure(Exception):
    pass


@dataclass
class Partition:
    pred: Predicate
    formula: z3.ExprRef
    tree: Node | None = None
    planes: list[Hyperplane] = field(default_factory=list)


def _lift(planes, ints, arity) -> list[Hyperplane]:
    out = []
    for h in planes:
        coeffs = [0] * arity
        for i, c in zip(ints, h.coeffs):
            coeffs[i] = c
        out.append(Hyperplane(tuple(coeffs), h.bias))
    return out


def _nearest(points, center, k):
    return sorted(points, key=lambda p: sum((int(a) - int(b)) ** 2 for a, b in zip(p, center)))[:k]


def learn_partition(pred: Predicate, pos, neg, cfg: SvmConfig | None = None,
                    mod_ks=(), use_svm: bool = True) -> Partition:
    """A formula over pred's canonical variables true on every point of
    `pos` and false on every point of `neg`."""
    cfg = cfg or SvmConfig()
    vs = pred.canonical_vars
    if not neg:
        return Partition(pred, smt.TRUE)
    if not pos:
        return Partition(pred, smt.FALSE)
    if set(map(tuple, pos)) & set(map(tuple, neg)):
        raise DegenerateData(f"{pred}: a point is labeled both ways")
    ints = [i for i, s in enumerate(pred.arg_sorts) if s is Sort.INT]
    proj = lambda pts: [tuple(p[i] for i in ints) for p in pts]  # noqa: E731
    planes: list[Hyperplane] = []
    if use_svm and ints:
        # Boolean arguments are left to the tree; integer projections that
        # occur with both labels carry no information for a plane
        ppos, pneg = proj(pos), proj(neg)
        both = set(ppos) & set(pneg)
        ppos = [p for p in ppos if p not in both]
        pneg = [p for p in pneg if p not in both]
        if ppos and pneg:
            planes = _lift(fit_svm(ppos, pneg, cfg), ints, pred.arity)
    points = list(pos) + list(neg)
    labels = [True] * len(pos) + [False] * len(neg)
    for attempt in range(UNSEPARABLE_RETRIES + 1):
        attrs = generate_attributes(pred, planes, mod_ks)
        try:
            t = induce_tree(points, labels, attrs)
        except UnseparableData as e:
            if attempt == UNSEPARABLE_RETRIES or not ints:
                raise LearnerFailure(str(e)) from e
            # refit on the neighbourhood of the offending pair
            k = 5 * (attempt + 1)
            lp = proj(_nearest(pos, e.pos_point, k))
            ln = proj(_nearest(neg, e.neg_point, k))
            if set(lp) & set(ln):
                raise LearnerFailure(str(e)) from e
            extra = _lift(fit_svm(lp, ln, cfg), ints, pred.arity)
            planes += [h for h in extra if h not in planes]
            continue
        return Partition(pred, tree_to_formula(t, vs), t, planes)
    raise LearnerFailure(f"{pred}: no consistent tree")  # pragma: no cover
