"""Backend layer over z3: satisfiability checks, models, quantifier
elimination, simplification and the node-count size metric."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import z3

log = logging.getLogger(__name__)

Assignment = dict  # variable name -> int | bool

SAT, UNSAT, UNKNOWN = "sat", "unsat", "unknown"

# per-call soft limit for a single backend query
CALL_TIMEOUT_S = 10.0


class BackendError(Exception):
    """The solver process or library failed (not the same as `unknown`)."""


class QeFailure(Exception):
    pass


class Timeout(Exception):
    """The engine-level wall-clock budget ran out."""


@dataclass
class SatVerdict:
    kind: str
    model: Assignment | None = None
    reason: str = ""

    @property
    def is_sat(self) -> bool:
        return self.kind == SAT

    @property
    def is_unsat(self) -> bool:
        return self.kind == UNSAT


TRUE = z3.BoolVal(True)
FALSE = z3.BoolVal(False)


def is_var(e: z3.ExprRef) -> bool:
    return z3.is_const(e) and e.decl().kind() == z3.Z3_OP_UNINTERPRETED


def free_vars(f: z3.ExprRef) -> list[z3.ExprRef]:
    """Uninterpreted constants of `f`, in first-occurrence order."""
    seen: set[int] = set()
    out: dict[str, z3.ExprRef] = {}
    stack = [f]
    while stack:
        e = stack.pop()
        if e.get_id() in seen:
            continue
        seen.add(e.get_id())
        if z3.is_quantifier(e):
            stack.append(e.body())
        elif is_var(e):
            out.setdefault(e.decl().name(), e)
        elif z3.is_app(e):
            stack.extend(reversed(e.children()))
    return list(out.values())


def size(f: z3.ExprRef) -> int:
    """Number of nodes of `f` viewed as a tree (shared subterms counted
    once per occurrence)."""
    memo: dict[int, int] = {}

    def go(e):
        key = e.get_id()
        if key in memo:
            return memo[key]
        if z3.is_quantifier(e):
            n = 1 + go(e.body())
        elif z3.is_app(e):
            n = 1 + sum(go(c) for c in e.children())
        else:
            n = 1
        memo[key] = n
        return n

    return go(f)


def _int_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("div by zero has no fixed value")
    r = a % abs(b)
    return (a - r) // b


def _int_mod(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("mod by zero has no fixed value")
    return a % abs(b)


def evaluate(f: z3.ExprRef, env: Assignment):
    """Evaluate a quantifier-free term under `env` with plain Python
    arithmetic. Deliberately independent of z3's own model evaluation."""
    k = f.decl().kind() if z3.is_app(f) else None
    if z3.is_quantifier(f):
        raise ValueError("cannot evaluate quantified formula")
    if z3.is_int_value(f):
        return f.as_long()
    if z3.is_true(f):
        return True
    if z3.is_false(f):
        return False
    if is_var(f):
        name = f.decl().name()
        if name not in env:
            raise KeyError(name)
        return env[name]
    args = [evaluate(c, env) for c in f.children()]
    if k == z3.Z3_OP_AND:
        return all(args)
    if k == z3.Z3_OP_OR:
        return any(args)
    if k == z3.Z3_OP_NOT:
        return not args[0]
    if k == z3.Z3_OP_IMPLIES:
        return (not args[0]) or args[1]
    if k == z3.Z3_OP_XOR:
        return args[0] != args[1]
    if k == z3.Z3_OP_IFF or k == z3.Z3_OP_EQ:
        return args[0] == args[1]
    if k == z3.Z3_OP_DISTINCT:
        return len(set(args)) == len(args)
    if k == z3.Z3_OP_ITE:
        return args[1] if args[0] else args[2]
    if k == z3.Z3_OP_LE:
        return args[0] <= args[1]
    if k == z3.Z3_OP_LT:
        return args[0] < args[1]
    if k == z3.Z3_OP_GE:
        return args[0] >= args[1]
    if k == z3.Z3_OP_GT:
        return args[0] > args[1]
    if k == z3.Z3_OP_ADD:
        return sum(args)
    if k == z3.Z3_OP_SUB:
        out = args[0]
        for a in args[1:]:
            out -= a
        return out
    if k == z3.Z3_OP_UMINUS:
        return -args[0]
    if k == z3.Z3_OP_MUL:
        out = 1
        for a in args:
            out *= a
        return out
    if k == z3.Z3_OP_IDIV:
        return _int_div(args[0], args[1])
    if k == z3.Z3_OP_MOD:
        return _int_mod(args[0], args[1])
    if k == z3.Z3_OP_REM:
        r = _int_mod(args[0], args[1])
        return r if args[1] >= 0 else -r
    if k == z3.Z3_OP_TO_INT or k == z3.Z3_OP_TO_REAL:
        return args[0]
    raise ValueError(f"unsupported operator in evaluation: {f.decl().name()}")


def value_expr(v, sort: z3.SortRef) -> z3.ExprRef:
    if sort == z3.BoolSort():
        return z3.BoolVal(bool(v))
    return z3.IntVal(int(v))


def substitute_values(f: z3.ExprRef, variables, values) -> z3.ExprRef:
    pairs = [(x, value_expr(v, x.sort())) for x, v in zip(variables, values)]
    return z3.substitute(f, *pairs) if pairs else f


def holds_at(f: z3.ExprRef, variables, values) -> bool:
    """Truth of `f` at a concrete point (all free variables must be bound)."""
    env = {x.decl().name(): v for x, v in zip(variables, values)}
    try:
        return bool(evaluate(f, env))
    except (KeyError, ValueError, ZeroDivisionError):
        g = z3.simplify(substitute_values(f, variables, values))
        return z3.is_true(g)


def model_to_assignment(m: z3.ModelRef, variables) -> Assignment:
    out: Assignment = {}
    for x in variables:
        v = m.eval(x, model_completion=True)
        if z3.is_bool(x):
            out[x.decl().name()] = z3.is_true(v)
        else:
            out[x.decl().name()] = v.as_long()
    return out


def goal_to_formula(result: z3.ApplyResult, ctx: z3.Context | None = None) -> z3.ExprRef:
    disj = []
    for g in result:
        fs = [g[i] for i in range(len(g))]
        disj.append(fs[0] if len(fs) == 1 else z3.And(*fs) if fs else z3.BoolVal(True, ctx))
    if not disj:
        return z3.BoolVal(False, ctx)
    return disj[0] if len(disj) == 1 else z3.Or(*disj)


def has_quantifier(f: z3.ExprRef) -> bool:
    stack, seen = [f], set()
    while stack:
        e = stack.pop()
        if e.get_id() in seen:
            continue
        seen.add(e.get_id())
        if z3.is_quantifier(e):
            return True
        if z3.is_app(e):
            stack.extend(e.children())
    return False


def mk_and(parts) -> z3.ExprRef:
    parts = [p for p in parts if not z3.is_true(p)]
    if any(z3.is_false(p) for p in parts):
        return FALSE
    if not parts:
        return TRUE
    return parts[0] if len(parts) == 1 else z3.And(*parts)


def mk_or(parts) -> z3.ExprRef:
    parts = [p for p in parts if not z3.is_false(p)]
    if any(z3.is_true(p) for p in parts):
        return TRUE
    if not parts:
        return FALSE
    return parts[0] if len(parts) == 1 else z3.Or(*parts)


def mk_not(f: z3.ExprRef) -> z3.ExprRef:
    if z3.is_true(f):
        return FALSE
    if z3.is_false(f):
        return TRUE
    if z3.is_not(f):
        return f.arg(0)
    return z3.Not(f)


def structural_simplify(f: z3.ExprRef) -> z3.ExprRef:
    """Cheap rewrites that never grow a formula: unit elimination in
    and/or, flattening, duplicate removal, double negation."""
    memo: dict[int, z3.ExprRef] = {}

    def go(e):
        key = e.get_id()
        if key in memo:
            return memo[key]
        if not z3.is_app(e) or not z3.is_bool(e) or e.num_args() == 0:
            out = e
        elif z3.is_not(e):
            out = mk_not(go(e.arg(0)))
        elif z3.is_and(e) or z3.is_or(e):
            conj = z3.is_and(e)
            flat, ids = [], set()
            for c in e.children():
                c = go(c)
                sub = c.children() if (conj and z3.is_and(c)) or (not conj and z3.is_or(c)) else [c]
                for s in sub:
                    if s.get_id() not in ids:
                        ids.add(s.get_id())
                        flat.append(s)
            out = mk_and(flat) if conj else mk_or(flat)
        elif z3.is_implies(e):
            a, b = go(e.arg(0)), go(e.arg(1))
            if z3.is_true(a):
                out = b
            elif z3.is_false(a) or z3.is_true(b):
                out = TRUE
            else:
                out = z3.Implies(a, b)
        else:
            out = e
        memo[key] = out
        return out

    return go(f)


@dataclass
class Backend:
    """One solver context per engine; not shared across threads."""

    seed: int = 0
    call_timeout_s: float = CALL_TIMEOUT_S
    deadline: float | None = None
    calls: int = 0
    qe_log: dict = field(default_factory=lambda: {"qe-light": 0, "qe": 0, "qe2": 0, "failed": 0})

    def __post_init__(self):
        version = os.environ.get("CHCLEARN_Z3_VERSION")
        if version and version != z3.get_version_string():
            raise BackendError(
                f"z3 {z3.get_version_string()} loaded but {version} requested")

    def _budget_ms(self) -> int:
        t = self.call_timeout_s
        if self.deadline is not None:
            left = self.deadline - time.monotonic()
            if left <= 0:
                raise Timeout()
            t = min(t, left)
        return max(1, int(t * 1000))

    def solver(self, ctx: z3.Context | None = None) -> z3.Solver:
        s = z3.Solver(ctx=ctx)
        s.set("random_seed", self.seed)
        s.set("timeout", self._budget_ms())
        return s

    def check(self, f: z3.ExprRef, variables=None) -> SatVerdict:
        """Check `f`; a Sat verdict carries a total assignment over
        `variables` (default: free variables of `f`).

        Every query runs in a fresh context so its outcome depends only on
        the formula, not on terms created earlier in the process."""
        if variables is None:
            variables = free_vars(f)
        ctx = z3.Context()
        s = self.solver(ctx)
        s.add(f.translate(ctx))
        return self._run(s, f, [x.translate(ctx) for x in variables])

    def _run(self, s, f, variables) -> SatVerdict:
        self.calls += 1
        try:
            r = s.check()
        except z3.Z3Exception as e:  # pragma: no cover - library failure
            raise BackendError(str(e)) from e
        if r == z3.sat:
            model = model_to_assignment(s.model(), variables)
            return SatVerdict(SAT, model)
        if r == z3.unsat:
            return SatVerdict(UNSAT)
        if self.deadline is not None and time.monotonic() >= self.deadline:
            raise Timeout()
        return SatVerdict(UNKNOWN, reason=s.reason_unknown())

    def is_valid(self, f: z3.ExprRef) -> bool | None:
        v = self.check(mk_not(f))
        if v.is_unsat:
            return True
        if v.is_sat:
            return False
        return None

    def equivalent(self, f: z3.ExprRef, g: z3.ExprRef) -> bool | None:
        return self.is_valid(f == g)

    def qelim(self, variables, body: z3.ExprRef) -> z3.ExprRef:
        """Return a quantifier-free formula equivalent to `exists variables. body`;
        raise QeFailure when no tactic manages it."""
        variables = list(variables)
        if not variables:
            return body
        names = {x.decl().name() for x in variables}
        ctx = z3.Context()
        q = z3.Exists(variables, body).translate(ctx)
        for tactic in ("qe-light", "qe", "qe2"):
            try:
                t = z3.TryFor(z3.Then(z3.Tactic(tactic, ctx), z3.Tactic("simplify", ctx)), self._budget_ms(), ctx)
                out = goal_to_formula(t(q), ctx).translate(z3.main_ctx())
            except Timeout:
                raise
            except z3.Z3Exception:
                continue
            if has_quantifier(out):
                continue
            if names & {x.decl().name() for x in free_vars(out)}:
                continue
            self.qe_log[tactic] += 1
            log.debug("qelim succeeded with %s", tactic)
            return out
        self.qe_log["failed"] += 1
        raise QeFailure(str(q))

    def simplify(self, f: z3.ExprRef) -> z3.ExprRef:
        """Equivalent formula, never larger than the structural rewrite."""
        own = structural_simplify(f)
        ctx = z3.Context()
        try:
            t = z3.TryFor(z3.Then("simplify", "propagate-values", "ctx-simplify", ctx=ctx), self._budget_ms(), ctx)
            theirs = goal_to_formula(t(own.translate(ctx)), ctx).translate(z3.main_ctx())
        except z3.Z3Exception:
            return own
        return theirs if size(theirs) < size(own) else own


def var(name: str, sort: z3.SortRef) -> z3.ExprRef:
    return z3.Const(name, sort)
