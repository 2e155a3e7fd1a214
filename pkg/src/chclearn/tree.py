"""Information-gain decision trees over integer attributes, and their
conversion to DNF formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import z3

from . import smt
from .features import Attribute

POSITIVE, NEGATIVE = True, False


class UnseparableData(Exception):
    def __init__(self, pos_point, neg_point):
        super().__init__(f"no attribute separates {pos_point} from {neg_point}")
        self.pos_point = pos_point
        self.neg_point = neg_point


def entropy(n_pos: int, n_neg: int) -> float:
    n = n_pos + n_neg
    out = 0.0
    for k in (n_pos, n_neg):
        if k:
            q = k / n
            out -= q * math.log2(q)
    return out


def split_gain(pos_le: int, neg_le: int, pos_gt: int, neg_gt: int) -> float:
    n = pos_le + neg_le + pos_gt + neg_gt
    if n == 0:
        return 0.0
    parent = entropy(pos_le + pos_gt, neg_le + neg_gt)
    le, gt = pos_le + neg_le, pos_gt + neg_gt
    return parent - (le * entropy(pos_le, neg_le) + gt * entropy(pos_gt, neg_gt)) / n


def info_gain(points, labels, attr: Attribute, c: int) -> float:
    """Gain of splitting the labeled points by attr <= c."""
    if not points:
        raise ValueError("info_gain of an empty set")
    counts = [0, 0, 0, 0]
    for x, y in zip(points, labels):
        le = attr.value(x) <= c
        counts[(0 if le else 2) + (0 if y else 1)] += 1
    return split_gain(*counts)


@dataclass
class Node:
    label: bool | None = None  # set on leaves
    attr: Attribute | None = None
    attr_index: int = -1
    threshold: int = 0
    left: "Node | None" = None  # attr <= threshold
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.attr is None

    def classify(self, x) -> bool:
        n = self
        while not n.is_leaf:
            n = n.left if n.attr.value(x) <= n.threshold else n.right
        return n.label

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def leaves(self) -> int:
        return 1 if self.is_leaf else self.left.leaves() + self.right.leaves()


def _best_split(rows, labels, attrs):
    """(gain, attr index, threshold) maximizing gain; ties to the smaller
    attribute index, then the smaller |threshold|. Only splits that put
    points on both sides are considered."""
    total_pos = sum(labels)
    total_neg = len(labels) - total_pos
    best = None
    for ai in range(len(attrs)):
        col = sorted((r[ai], y) for r, y in zip(rows, labels))
        pos_le = neg_le = 0
        for k in range(len(col) - 1):
            v, y = col[k]
            if y:
                pos_le += 1
            else:
                neg_le += 1
            nxt = col[k + 1][0]
            if nxt == v:
                continue
            c = (v + nxt) // 2  # integer midpoint in [v, nxt)
            g = split_gain(pos_le, neg_le, total_pos - pos_le, total_neg - neg_le)
            key = (-round(g, 12), ai, abs(c))
            if best is None or key < best[0]:
                best = (key, g, ai, c)
    return None if best is None else best[1:]


def induce_tree(points, labels, attrs: list[Attribute]) -> Node:
    """Grow a tree that classifies every training point correctly."""
    labels = [bool(y) for y in labels]
    rows = [tuple(a.value(x) for a in attrs) for x in points]
    return _prune(_grow(list(range(len(rows))), rows, labels, attrs, points))


def _grow(idx, rows, labels, attrs, points) -> Node:
    ys = [labels[i] for i in idx]
    if not idx or all(ys):
        return Node(label=POSITIVE)
    if not any(ys):
        return Node(label=NEGATIVE)
    split = _best_split([rows[i] for i in idx], ys, attrs)
    if split is None:
        p = next(points[i] for i in idx if labels[i])
        n = next(points[i] for i in idx if not labels[i])
        raise UnseparableData(p, n)
    _, ai, c = split
    left = [i for i in idx if rows[i][ai] <= c]
    right = [i for i in idx if rows[i][ai] > c]
    return Node(attr=attrs[ai], attr_index=ai, threshold=c,
                left=_grow(left, rows, labels, attrs, points),
                right=_grow(right, rows, labels, attrs, points))


def _prune(n: Node) -> Node:
    if n.is_leaf:
        return n
    n.left, n.right = _prune(n.left), _prune(n.right)
    if n.left.is_leaf and n.right.is_leaf and n.left.label == n.right.label:
        return Node(label=n.left.label)
    return n


def tree_to_formula(t: Node, vs) -> z3.ExprRef:
    """Disjunction over root-to-positive-leaf paths of the conjunction of
    the literals along the path."""
    paths = []

    def go(n: Node, lits):
        if n.is_leaf:
            if n.label:
                paths.append(smt.mk_and(lits))
            return
        atom = n.attr.literal(vs, n.threshold)
        go(n.left, lits + [atom])
        go(n.right, lits + [smt.mk_not(atom)])

    go(t, [])
    return smt.mk_or(paths)
