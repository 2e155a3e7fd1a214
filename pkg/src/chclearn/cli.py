"""Command line: `chclearn solve FILE` and `chclearn suite DIR`."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys

from .dataset import QueueMode
from .engine import Strategy
from .harness import RunConfig, run_suite, solve_file, write_stats
from .reasoner import ReasonerConfig
from .svm import SvmConfig

EXIT_SOLVED, EXIT_CRASH, EXIT_TIMEOUT, EXIT_UNKNOWN, EXIT_UNVERIFIED = 0, 1, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=["smt2", "datalog"], default=None)
    p.add_argument("--timeout", type=float, default=360.0, help="seconds per instance")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="slu")
    p.add_argument("--rotate-on-stall", type=int, metavar="K", default=None)
    p.add_argument("--no-safe-zone", action="store_true")
    p.add_argument("--no-unsafe-zone", action="store_true")
    p.add_argument("--no-learner", action="store_true")
    p.add_argument("--queue", type=int, nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--expand-rounds", type=int, default=3)
    p.add_argument("--body-skip", type=int, default=500)
    p.add_argument("--zone-stop", type=int, default=1500)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--coef-cap", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-verify", action="store_true")
    p.add_argument("--stats", metavar="OUT.jsonl", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chclearn", description="CHC solver with zones and a learned partition")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("file")
    _common(s)
    u = sub.add_parser("suite", help="run every instance in a directory")
    u.add_argument("dir")
    u.add_argument("--jobs", type=int, default=1)
    u.add_argument("--repeats", type=int, default=1)
    _common(u)
    return ap


def config_from_args(a) -> RunConfig:
    return RunConfig(
        timeout_s=a.timeout,
        strategy=Strategy(a.strategy),
        rotate_on_stall=a.rotate_on_stall,
        seed=a.seed,
        no_safe_zone=a.no_safe_zone,
        no_unsafe_zone=a.no_unsafe_zone,
        no_learner=a.no_learner,
        reasoner=ReasonerConfig(body_size_skip=a.body_skip, zone_size_stop=a.zone_stop,
                                max_rounds=a.expand_rounds, expand_enabled=a.expand_rounds > 0),
        svm=SvmConfig(c_penalty=a.svm_c, coef_cap=a.coef_cap),
        queue=QueueMode(*a.queue) if a.queue else None,
        verify_output=not a.no_verify,
        fmt=a.format,
    )


def _oneline(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip()


def format_model(h, interp: dict) -> str:
    lines = []
    for name in sorted(interp):
        p = h.predicates[name]
        params = " ".join(f"({v} {s.value})" for v, s in zip(p.canonical_vars, p.arg_sorts))
        lines.append(f"(define-fun {name} ({params}) Bool {_oneline(interp[name].sexpr())})")
    return "\n".join(lines)


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(a)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CRASH
    if a.cmd == "solve":
        return _solve(a, cfg)
    summary, reports = run_suite(a.dir, cfg, jobs=a.jobs, repeats=a.repeats, out=a.stats)
    for r in reports:
        print(json.dumps({"path": r.path, "verdict": r.verdict, "time_s": round(r.wall_time_s, 3),
                          "verified": r.verified, "reason": r.reason}))
    print(json.dumps({"summary": summary}))
    return EXIT_UNVERIFIED if summary["unverified"] else EXIT_SOLVED


def _solve(a, cfg: RunConfig) -> int:
    from . import frontend
    report, res = solve_file(a.file, cfg)
    if a.stats:
        write_stats(a.stats, [report], None, cfg)
    if report.verdict == "error":
        print(f"error {report.reason}", file=sys.stderr)
        return EXIT_CRASH if report.reason.startswith("crash") else EXIT_UNKNOWN
    if report.verdict == "unknown":
        print(f"unknown {report.reason}")
        return EXIT_TIMEOUT if report.reason == "timeout" else EXIT_UNKNOWN
    print(report.verdict)
    if report.verdict == "sat":
        print(format_model(frontend.parse_file(a.file, cfg.fmt), res.interp))
    if cfg.verify_output and not report.verified:
        print(f"error {report.reason}", file=sys.stderr)
        return EXIT_UNVERIFIED
    return EXIT_SOLVED


if __name__ == "__main__":
    sys.exit(main())
