"""Soft-margin linear SVM planes with small integer coefficients."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
from cvxopt import matrix, solvers, sparse, spmatrix


class DegenerateData(Exception):
    """The same point carries both labels."""


@dataclass(frozen=True)
class Hyperplane:
    """coeffs . x + bias <= 0 is the positive side."""

    coeffs: tuple[int, ...]
    bias: int

    def lhs(self, x) -> int:
        return sum(c * int(v) for c, v in zip(self.coeffs, x))

    def positive(self, x) -> bool:
        return self.lhs(x) + self.bias <= 0


@dataclass
class SvmConfig:
    c_penalty: float = 1.0
    coef_cap: int = 10
    max_rounds: int = 8
    tol: float = 1e-8
    c_escalations: int = 5

    def __post_init__(self):
        if self.c_penalty <= 0:
            raise ValueError("c_penalty must be positive")
        if self.coef_cap < 1 or self.max_rounds < 1:
            raise ValueError("coef_cap and max_rounds must be at least 1")
        if self.c_escalations < 0:
            raise ValueError("c_escalations must be non-negative")


def _soft_margin_qp(X: np.ndarray, y: np.ndarray, c: float, tol: float):
    """Primal soft-margin problem over z = (w, b, xi):
    min 1/2 w.w + c sum(xi)  s.t.  y_i (w.x_i + b) >= 1 - xi_i,  xi >= 0."""
    n, d = X.shape
    m = d + 1 + n
    P = spmatrix(1.0, range(d), range(d), (m, m))
    q = matrix(np.hstack([np.zeros(d + 1), c * np.ones(n)]))
    margin = matrix(np.hstack([-y[:, None] * X, -y[:, None]]))
    neg_eye = spmatrix(-1.0, range(n), range(n))
    G = sparse([[sparse(margin), spmatrix([], [], [], (n, d + 1))], [neg_eye, neg_eye]])
    h = matrix(np.hstack([-np.ones(n), np.zeros(n)]))
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
    sol = solvers.qp(P, q, G, h, options=opts)
    if sol["x"] is None:
        return None
    z = np.array(sol["x"]).ravel()
    return z[:d], float(z[d])


def _fit_real(pos: np.ndarray, neg: np.ndarray, cfg: SvmConfig) -> tuple[np.ndarray, float] | None:
    """Real weights (w, b) with w.x + b < 0 on the positive side, in the
    original coordinates. None when the fit is degenerate."""
    X = np.vstack([pos, neg]).astype(float)
    y = np.array([-1.0] * len(pos) + [1.0] * len(neg))
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    c = cfg.c_penalty
    best = None
    # scaling shrinks margins, so c may leave slack on separable data;
    # raise it until the subset is separated or the budget runs out
    for _ in range(cfg.c_escalations + 1):
        fit = _soft_margin_qp(Xs, y, c, cfg.tol)
        if fit is None:
            break
        w, b = fit
        if np.abs(w).max(initial=0.0) < 1e-6:
            break
        best = (w / scale, b)
        if np.all(y * (Xs @ w + b) > 0):
            break
        c *= 10.0
    return best


def _correct(h: np.ndarray, c, is_pos: np.ndarray) -> np.ndarray:
    return np.where(is_pos, h <= c, h > c)


def integerize(w: np.ndarray, b: float, pts: np.ndarray, is_pos: np.ndarray,
               coef_cap: int = 10) -> Hyperplane | None:
    """Integer plane with |coeff| <= coef_cap that keeps every training
    point the real plane got right; if no scale achieves that, the scale
    with the fewest errors among those points."""
    real_ok = _correct(pts.astype(float) @ w + b, 0.0, is_pos)
    wn = w / np.abs(w).max()
    best, best_err = None, None
    seen = set()
    for m in range(1, coef_cap + 1):
        ints = [int(round(x * m)) for x in wn]
        g = reduce(math.gcd, (abs(x) for x in ints), 0)
        if g == 0:
            continue
        ints = tuple(x // g for x in ints)
        if ints in seen:
            continue
        seen.add(ints)
        h = pts.astype(object) @ np.array(ints, dtype=object) if len(pts) else np.array([])
        c, err = _best_threshold(h, is_pos, real_ok)
        if best_err is None or err < best_err:
            best, best_err = Hyperplane(ints, -c), err
        if err == 0:
            return best
    # rounding lost a point: search integer directions near w directly
    cands = _directions(len(w), coef_cap, seen)
    if len(cands) and len(pts):
        H = pts.astype(float) @ cands.T
        pm, nm = is_pos & real_ok, ~is_pos & real_ok
        lo = H[pm].max(axis=0) if pm.any() else np.full(len(cands), -np.inf)
        hi = H[nm].min(axis=0) if nm.any() else np.full(len(cands), np.inf)
        ok = np.flatnonzero(lo < hi)
        if len(ok):
            cos = cands[ok] @ w / np.linalg.norm(cands[ok], axis=1)
            ints = tuple(int(x) for x in cands[ok[int(np.argmax(cos))]])
            h = pts.astype(object) @ np.array(ints, dtype=object)
            c, _ = _best_threshold(h, is_pos, real_ok)
            return Hyperplane(ints, -c)
    return best


_FULL_SEARCH_DIM = 3


def _directions(d: int, cap: int, rounded) -> np.ndarray:
    """Primitive integer vectors with |coeff| <= cap: all of them in low
    dimension, otherwise the +-1 neighbours of the rounded candidates."""
    if d <= _FULL_SEARCH_DIM:
        return _all_directions(d, cap)
    vecs = (tuple(a + e for a, e in zip(r, delta)) for r in rounded
            for delta in itertools.product((-1, 0, 1), repeat=d))
    return _primitive(vecs, d, cap)


@lru_cache(maxsize=None)
def _all_directions(d: int, cap: int) -> np.ndarray:
    return _primitive(itertools.product(range(-cap, cap + 1), repeat=d), d, cap)


def _primitive(vecs, d: int, cap: int) -> np.ndarray:
    out = set()
    for v in vecs:
        if max(abs(x) for x in v) > cap:
            continue
        if reduce(math.gcd, (abs(x) for x in v), 0) == 1:
            out.add(v)
    return np.array(sorted(out), dtype=float).reshape(len(out), d)


def _best_threshold(h, is_pos, must) -> tuple[int, int]:
    """Integer c minimizing errors on the `must` points for the rule
    h <= c means positive. Ties go to the most errors-free overall."""
    cands = sorted(set(int(v) for v in h))
    if not cands:
        return 0, 0
    best = None
    for c in [cands[0] - 1] + cands:
        ok = _correct(h, c, is_pos)
        key = (int(np.sum(must & ~ok)), int(np.sum(~ok)), abs(c))
        if best is None or key < best[0]:
            best = (key, c)
    return best[1], best[0][0]


def fit_svm(pos, neg, cfg: SvmConfig | None = None) -> list[Hyperplane]:
    """Planes from repeated soft-margin fits: each round refits on the
    points that every plane so far gets wrong."""
    cfg = cfg or SvmConfig()
    pos = np.array([list(map(int, p)) for p in pos], dtype=object).reshape(len(pos), -1)
    neg = np.array([list(map(int, p)) for p in neg], dtype=object).reshape(len(neg), -1)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("fit_svm needs both positive and negative points")
    if {tuple(p) for p in pos} & {tuple(n) for n in neg}:
        raise DegenerateData("a point is labeled both positive and negative")
    if pos.shape[1] == 0:
        return []
    planes: list[Hyperplane] = []
    cur_pos, cur_neg = pos, neg
    for _ in range(cfg.max_rounds):
        if len(cur_pos) == 0 or len(cur_neg) == 0:
            break
        fit = _fit_real(cur_pos.astype(float), cur_neg.astype(float), cfg)
        if fit is None:
            # symmetric data: split the larger class and try again
            if len(cur_pos) >= len(cur_neg) and len(cur_pos) > 1:
                cur_pos = cur_pos[: len(cur_pos) // 2]
            elif len(cur_neg) > 1:
                cur_neg = cur_neg[: len(cur_neg) // 2]
            else:
                break
            continue
        w, b = fit
        pts = np.vstack([cur_pos, cur_neg])
        is_pos = np.array([True] * len(cur_pos) + [False] * len(cur_neg))
        plane = integerize(w, b, pts, is_pos, cfg.coef_cap)
        if plane is None:
            break
        if plane in planes:
            # no new information; halve the larger class for the next round
            if len(cur_pos) >= len(cur_neg) and len(cur_pos) > 1:
                cur_pos = cur_pos[: len(cur_pos) // 2]
            elif len(cur_neg) > 1:
                cur_neg = cur_neg[: len(cur_neg) // 2]
            else:
                break
            continue
        planes.append(plane)
        # points every plane so far puts on the wrong side
        wrong_pos = [p for p in pos if not any(h.positive(p) for h in planes)]
        wrong_neg = [n for n in neg if all(h.positive(n) for h in planes)]
        if not wrong_pos and not wrong_neg:
            break
        # refit the misclassified points of one class against the other class
        if len(wrong_pos) >= len(wrong_neg):
            cur_pos, cur_neg = np.array(wrong_pos, dtype=object), neg
        else:
            cur_pos, cur_neg = pos, np.array(wrong_neg, dtype=object)
    return planes
