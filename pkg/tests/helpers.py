"""Shared test helpers: the instance directory and quick system builders."""

from pathlib import Path

from chclearn import frontend, model, smt

DATA = Path(__file__).parent / "data"

H0_TEXT = (DATA / "nonlin_mult_2.smt2").read_text()

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def load(name, backend=None):
    h = frontend.parse_file(DATA / name)
    return model.normalize_system(h, backend or smt.Backend())


def system(text, backend=None):
    return model.normalize_system(frontend.parse(text), backend or smt.Backend())


def horn(decls, *clauses):
    """SMT-LIB2 Horn text from `(name (Sort ...))` pairs and assert bodies."""
    out = ["(set-logic HORN)"]
    for name, sorts in decls:
        out.append(f"(declare-fun {name} ({' '.join(sorts)}) Bool)")
    out += [f"(assert {c})" for c in clauses]
    out.append("(check-sat)")
    return "\n".join(out)
