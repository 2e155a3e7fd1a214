"""Readers for SMT-LIB2 (HORN logic) and Datalog rule/query files.

Term-level parsing is delegated to z3; this module only scans top-level
commands (for sort checks and error positions) and lifts the resulting
assertions into clauses.
"""

from __future__ import annotations

import enum
import re
from pathlib import Path

import z3

from . import smt
from .model import ChcSystem, Clause, MalformedSystem, PredApp, Predicate, Sort


class ParseError(Exception):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f"line {line} column {column}: " if line is not None else ""
        super().__init__(where + msg)


class UnsupportedTheory(Exception):
    pass


class InputFormat(enum.Enum):
    SMTLIB2 = "smt2"
    DATALOG = "datalog"


_SUPPORTED = {"Int", "Bool"}
_DATALOG_MARKERS = re.compile(r"\((declare-rel|declare-var|rule|query)\b")


def detect_format(text: str, path: str | None = None) -> InputFormat:
    if path and Path(path).suffix in (".dl", ".datalog"):
        return InputFormat.DATALOG
    if _DATALOG_MARKERS.search(_strip_comments(text)):
        return InputFormat.DATALOG
    return InputFormat.SMTLIB2


def _strip_comments(text: str) -> str:
    return re.sub(r";[^\n]*", "", text)


def read_sexprs(text: str) -> list:
    """Top-level s-expressions as nested lists of atoms, each list tagged
    with its (line, column). Only used for command scanning."""
    out, stack = [], []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                advance()
        elif ch.isspace():
            advance()
        elif ch == "(":
            stack.append(([], line, col))
            advance()
        elif ch == ")":
            if not stack:
                raise ParseError("unbalanced ')'", line, col)
            items, l0, c0 = stack.pop()
            node = _SExpr(items, l0, c0)
            (stack[-1][0] if stack else out).append(node)
            advance()
        else:
            l0, c0 = line, col
            if ch == "|":
                j = text.find("|", i + 1)
                if j < 0:
                    raise ParseError("unterminated quoted symbol", line, col)
                tok = text[i:j + 1]
            elif ch == '"':
                j = i + 1
                while j < n and not (text[j] == '"' and text[j - 1] != "\\"):
                    j += 1
                if j >= n:
                    raise ParseError("unterminated string", line, col)
                tok = text[i:j + 1]
            else:
                j = i
                while j < n and not text[j].isspace() and text[j] not in "();":
                    j += 1
                tok = text[i:j]
            if not stack:
                raise ParseError(f"unexpected token {tok!r} at top level", l0, c0)
            stack[-1][0].append(tok)
            advance(len(tok))
    if stack:
        _, l0, c0 = stack[-1]
        raise ParseError("unbalanced '('", l0, c0)
    return out


class _SExpr(list):
    def __init__(self, items, line, col):
        super().__init__(items)
        self.line, self.col = line, col


def _sort_name(s) -> str:
    return s if isinstance(s, str) else "(" + " ".join(_sort_name(x) for x in s) + ")"


def _check_sorts(cmds) -> None:
    for cmd in cmds:
        if not cmd or not isinstance(cmd[0], str):
            continue
        head = cmd[0]
        sorts = []
        if head == "declare-fun" and len(cmd) >= 4:
            sorts = list(cmd[2]) + [cmd[3]]
        elif head == "declare-const" and len(cmd) >= 3:
            sorts = [cmd[2]]
        elif head == "declare-rel" and len(cmd) >= 3:
            sorts = list(cmd[2])
        elif head == "declare-var" and len(cmd) >= 3:
            sorts = [cmd[2]]
        elif head == "define-sort" or head == "declare-datatypes" or head == "declare-datatype":
            raise UnsupportedTheory(f"line {cmd.line}: {head} is not supported")
        for s in sorts:
            if _sort_name(s) not in _SUPPORTED:
                raise UnsupportedTheory(
                    f"line {cmd.line}: sort {_sort_name(s)} in {head} {cmd[1]} (only Int and Bool)")


_POS = re.compile(r"line (\d+) column (\d+)")


def _z3_error(e: z3.Z3Exception) -> ParseError:
    msg = e.value.decode() if isinstance(e.value, bytes) else str(e.value)
    m = _POS.search(msg)
    if m:
        return ParseError(msg.strip(), int(m.group(1)), int(m.group(2)))
    return ParseError(msg.strip())


class _Lifter:
    """Turns closed Horn assertions into `Clause` objects."""

    def __init__(self):
        self.preds: dict[str, Predicate] = {}
        self.pred_names: set[str] = set()
        self.clauses: list[Clause] = []

    def predicate(self, decl: z3.FuncDeclRef) -> Predicate:
        name = decl.name()
        try:
            sorts = tuple(Sort.of(decl.domain(i)) for i in range(decl.arity()))
        except ValueError as e:
            raise UnsupportedTheory(f"predicate {name}: {e}") from None
        p = self.preds.get(name)
        if p is None:
            p = self.preds[name] = Predicate(name, sorts)
        elif p.arg_sorts != sorts:
            raise MalformedSystem(f"predicate {name} used with two signatures")
        return p

    def is_pred_app(self, e: z3.ExprRef) -> bool:
        return (z3.is_app(e) and z3.is_bool(e)
                and e.decl().kind() == z3.Z3_OP_UNINTERPRETED
                and e.decl().name() in self.pred_names)

    def contains_pred(self, e: z3.ExprRef) -> bool:
        if self.is_pred_app(e):
            return True
        if z3.is_quantifier(e):
            return self.contains_pred(e.body())
        return z3.is_app(e) and any(self.contains_pred(c) for c in e.children())

    def open_quantifier(self, q: z3.QuantifierRef, used: set[str]) -> z3.ExprRef:
        consts = []
        for i in range(q.num_vars()):
            name = q.var_name(i)
            while name in used:
                name += "'"
            used.add(name)
            sort = q.var_sort(i)
            if sort not in (z3.IntSort(), z3.BoolSort()):
                raise UnsupportedTheory(f"variable {name} of sort {sort}")
            consts.append(z3.Const(name, sort))
        return z3.substitute_vars(q.body(), *reversed(consts))

    def add_assertion(self, f: z3.ExprRef) -> None:
        used = {x.decl().name() for x in smt.free_vars(f)}
        while z3.is_quantifier(f) and q_forall(f):
            f = self.open_quantifier(f, used)
        if z3.is_quantifier(f):
            raise MalformedSystem("existential at clause level")
        if z3.is_implies(f):
            body, head = f.arg(0), f.arg(1)
        elif z3.is_not(f):
            body, head = f.arg(0), smt.FALSE
        elif z3.is_or(f):
            neg, pos = [], []
            for lit in f.children():
                if self.is_pred_app(lit):
                    pos.append(lit)
                elif z3.is_not(lit) and self.is_pred_app(lit.arg(0)):
                    neg.append(lit.arg(0))
                elif self.contains_pred(lit):
                    raise MalformedSystem(f"non-Horn literal {lit}")
                else:
                    neg.append(smt.mk_not(lit))
            if len(pos) > 1:
                raise MalformedSystem("clause with more than one positive predicate literal")
            body, head = smt.mk_and(neg), (pos[0] if pos else smt.FALSE)
        else:
            body, head = smt.TRUE, f
        self.add_clause(body, head, used)

    def add_clause(self, body, head, used) -> None:
        constraint, apps = [], []
        todo = [body]
        while todo:
            b = todo.pop(0)
            if z3.is_quantifier(b) and not q_forall(b):
                todo.insert(0, self.open_quantifier(b, used))
            elif z3.is_and(b):
                todo[0:0] = list(b.children())
            elif self.is_pred_app(b):
                apps.append(PredApp(self.predicate(b.decl()), tuple(b.children())))
            elif self.contains_pred(b):
                raise MalformedSystem(f"predicate under a non-Horn connective: {b}")
            else:
                constraint.append(b)
        while z3.is_quantifier(head) and q_forall(head):
            head = self.open_quantifier(head, used)
        if z3.is_and(head) and self.contains_pred(head):
            for h in head.children():
                self.add_clause(body, h, used)
            return
        if z3.is_implies(head):
            self.add_clause(smt.mk_and([body, head.arg(0)]), head.arg(1), used)
            return
        if self.is_pred_app(head):
            happ = PredApp(self.predicate(head.decl()), tuple(head.children()))
        elif self.contains_pred(head):
            raise MalformedSystem(f"non-Horn head {head}")
        else:
            if not z3.is_false(head):
                constraint.append(smt.mk_not(head))
            happ = None
        label = f"C{len(self.clauses)}"
        self.clauses.append(Clause(smt.mk_and(constraint), tuple(apps), happ, label))


def q_forall(q) -> bool:
    return q.is_forall()


def _collect_predicates(lifter: _Lifter, formulas, declared: set[str]) -> None:
    seen = set()
    stack = list(formulas)
    while stack:
        e = stack.pop()
        if e.get_id() in seen:
            continue
        seen.add(e.get_id())
        if z3.is_quantifier(e):
            stack.append(e.body())
            continue
        if not z3.is_app(e):
            continue
        d = e.decl()
        if d.kind() == z3.Z3_OP_UNINTERPRETED and d.name() in declared:
            lifter.predicate(d)
        stack.extend(e.children())


def _declared_predicates(cmds) -> tuple[set[str], set[str]]:
    """Names declared as Bool-valued functions/relations, and names of
    declared Int/Bool functions with a non-Bool range."""
    preds, funs = set(), set()
    for cmd in cmds:
        if not cmd or not isinstance(cmd[0], str):
            continue
        if cmd[0] == "declare-fun" and len(cmd) >= 4:
            if cmd[3] == "Bool":
                preds.add(_unquote(cmd[1]))
            elif cmd[2]:
                funs.add(_unquote(cmd[1]))
        elif cmd[0] == "declare-rel":
            preds.add(_unquote(cmd[1]))
    return preds, funs


def _unquote(s: str) -> str:
    return s[1:-1] if s.startswith("|") and s.endswith("|") else s


def parse(text: str, fmt: InputFormat | str | None = None, path: str | None = None) -> ChcSystem:
    """Parse a CHC file body into an un-normalized system."""
    cmds = read_sexprs(text)
    _check_sorts(cmds)
    if fmt is None:
        fmt = detect_format(text, path)
    fmt = InputFormat(fmt)
    preds, funs = _declared_predicates(cmds)
    if funs:
        raise UnsupportedTheory(f"uninterpreted functions are not supported: {sorted(funs)}")
    lifter = _Lifter()
    if fmt is InputFormat.SMTLIB2:
        # nullary Bool declarations outside HORN predicates are plain variables
        lifter.pred_names = preds
        try:
            asserts = list(z3.parse_smt2_string(text))
        except z3.Z3Exception as e:
            raise _z3_error(e) from None
        _collect_predicates(lifter, asserts, preds)
        for name in sorted(preds - set(lifter.preds)):
            # declared but unused predicates
            for cmd in cmds:
                if cmd and cmd[0] == "declare-fun" and _unquote(cmd[1]) == name:
                    lifter.preds[name] = Predicate(name, tuple(Sort(s) for s in cmd[2]))
        for a in asserts:
            lifter.add_assertion(a)
    else:
        lifter.pred_names = preds
        fp = z3.Fixedpoint()
        try:
            queries = list(fp.parse_string(text))
        except z3.Z3Exception as e:
            raise _z3_error(e) from None
        rules = list(fp.get_rules())
        _collect_predicates(lifter, rules + queries, preds)
        for cmd in cmds:
            if cmd and cmd[0] == "declare-rel" and _unquote(cmd[1]) not in lifter.preds:
                name = _unquote(cmd[1])
                lifter.preds[name] = Predicate(name, tuple(Sort(s) for s in cmd[2]))
        for r in rules:
            lifter.add_assertion(r)
        for q in queries:
            _add_query(lifter, q)
    system = ChcSystem(dict(lifter.preds), lifter.clauses)
    for c in system.clauses:
        for app in c.apps:
            if app.pred.name not in system.predicates:
                raise MalformedSystem(f"undeclared predicate {app.pred.name}")
    return system


def _add_query(lifter: _Lifter, q: z3.ExprRef) -> None:
    # (query p) comes back as p applied to de Bruijn variables
    used: set[str] = set()
    if lifter.is_pred_app(q):
        p = lifter.predicate(q.decl())
        args = tuple(z3.Const(f"q{i}", s.z3()) for i, s in enumerate(p.arg_sorts))
        for a in args:
            used.add(a.decl().name())
        lifter.add_clause(p.decl()(*args) if args else z3.Bool(p.name), smt.FALSE, used)
    else:
        lifter.add_clause(q, smt.FALSE, used)


def parse_file(path: str | Path, fmt: InputFormat | str | None = None) -> ChcSystem:
    text = Path(path).read_text(encoding="utf-8")
    return parse(text, fmt, str(path))


def to_smtlib2(h: ChcSystem) -> str:
    """Print a system in SMT-LIB2 HORN form."""
    lines = ["(set-logic HORN)"]
    for p in h.predicates.values():
        sorts = " ".join(s.value for s in p.arg_sorts)
        lines.append(f"(declare-fun {_sym(p.name)} ({sorts}) Bool)")
    for c in h.clauses:
        vs = c.all_vars
        body = smt.mk_and([c.constraint, *(a.as_z3() for a in c.body)])
        head = c.head.as_z3() if c.head is not None else smt.FALSE
        imp = f"(=> {body.sexpr()} {head.sexpr()})"
        if vs:
            binders = " ".join(f"({x.sexpr()} {x.sort().sexpr()})" for x in vs)
            imp = f"(forall ({binders}) {imp})"
        lines.append(f"(assert {imp})")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def _sym(name: str) -> str:
    return name if re.fullmatch(r"[A-Za-z_~!@$%^&*+=<>.?/\-][\w~!@$%^&*+=<>.?/\-']*", name) else f"|{name}|"
