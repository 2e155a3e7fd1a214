"""Per-instance runs with verification, and the benchmark-suite runner."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import z3

from . import frontend, model, smt
from .dataset import QueueMode
from .engine import (EngineConfig, SolveResult, Strategy, check_hypothesis,
                     replay, solve)
from .reasoner import ReasonerConfig
from .svm import SvmConfig

log = logging.getLogger(__name__)

STATS_FORMAT = "chclearn-stats"
STATS_VERSION = 1
SUFFIXES = (".smt2", ".dl", ".datalog")


@dataclass
class RunConfig:
    timeout_s: float = 360.0
    strategy: Strategy = Strategy.SLU
    rotate_on_stall: int | None = None
    seed: int = 0
    no_safe_zone: bool = False
    no_unsafe_zone: bool = False
    no_learner: bool = False
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    queue: QueueMode | None = None
    verify_output: bool = True
    fmt: str | None = None

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            strategy=self.strategy, rotate_on_stall=self.rotate_on_stall,
            use_safe=not self.no_safe_zone, use_unsafe=not self.no_unsafe_zone,
            no_learner=self.no_learner, reasoner=self.reasoner, svm=self.svm,
            queue=self.queue, timeout_s=self.timeout_s)


@dataclass
class InstanceReport:
    path: str
    verdict: str  # sat | unsat | unknown | error
    wall_time_s: float
    iterations: int = 0
    counterexamples: int = 0
    strategy_used: str = ""
    verified: bool = False
    reason: str = ""
    seed: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.verdict in ("sat", "unsat")

    def to_json(self) -> dict:
        return asdict(self)

    def deterministic_view(self) -> dict:
        """The report without wall-clock measurements."""
        d = self.to_json()
        d.pop("wall_time_s")
        d["stats"] = {k: v for k, v in d["stats"].items() if not k.endswith("_s")}
        return d


class VerificationError(Exception):
    pass


def verify_sat(original: model.ChcSystem, normalized: model.ChcSystem, interp: dict,
               backend: smt.Backend) -> None:
    for h in (original, normalized):
        missing = set(h.predicates) - set(interp)
        if missing:
            raise VerificationError(f"no interpretation for {sorted(missing)}")
        fail = check_hypothesis(h, interp, backend)
        if fail is not None:
            raise VerificationError(f"clause {fail[0].label} fails under the interpretation")


def verify(original, normalized, res: SolveResult, backend: smt.Backend) -> bool:
    if res.verdict == "sat":
        verify_sat(original, normalized, res.interp, backend)
        return True
    if res.verdict == "unsat":
        if res.witness is None or not replay(normalized, res.witness):
            raise VerificationError("unsat witness does not replay")
        return True
    return False


def solve_file(path, cfg: RunConfig) -> tuple[InstanceReport, SolveResult | None]:
    """Parse, normalize, solve and (optionally) verify one instance."""
    t0 = time.monotonic()
    backend = smt.Backend(seed=cfg.seed)
    backend.deadline = t0 + cfg.timeout_s
    report = InstanceReport(str(path), "error", 0.0, seed=cfg.seed)
    res = None
    try:
        original = frontend.parse_file(path, cfg.fmt)
        h = model.normalize_system(original, backend)
        ecfg = cfg.engine_config()
        ecfg.timeout_s = max(1e-9, cfg.timeout_s - (time.monotonic() - t0))
        res = solve(h, ecfg, backend)
        report.verdict = res.verdict
        report.reason = res.reason
        report.iterations = res.stats.get("iterations", 0)
        report.counterexamples = res.stats.get("counterexamples", 0)
        report.strategy_used = res.strategy.value if res.strategy else ""
        report.stats = {k: v for k, v in res.stats.items()}
        if cfg.verify_output and res.solved:
            backend.deadline = None
            try:
                report.verified = verify(original, h, res, backend)
            except (VerificationError, smt.BackendError) as e:
                report.verified = False
                report.reason = f"verification failed: {e}"
    except smt.Timeout:
        report.verdict, report.reason = "unknown", "timeout"
    except (frontend.ParseError, frontend.UnsupportedTheory, model.MalformedSystem) as e:
        report.verdict, report.reason = "error", f"{type(e).__name__}: {e}"
    except Exception as e:  # noqa: BLE001 - crashes are reported, not raised
        log.debug("crash on %s\n%s", path, traceback.format_exc())
        report.verdict, report.reason = "error", f"crash: {type(e).__name__}: {e}"
    report.wall_time_s = time.monotonic() - t0
    return report, res


def run_instance(path, cfg: RunConfig) -> InstanceReport:
    return solve_file(path, cfg)[0]


def _job(args) -> InstanceReport:
    path, cfg = args
    return run_instance(path, cfg)


def instances(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix in SUFFIXES)


def _better(a: InstanceReport, b: InstanceReport) -> InstanceReport:
    if a.solved != b.solved:
        return a if a.solved else b
    return a if a.wall_time_s <= b.wall_time_s else b


def summarize(reports: list[InstanceReport], timeout_s: float) -> dict:
    """Counts over solved instances; avg_t charges every unsolved instance
    the full timeout, avg_t_solved averages solved ones only."""
    solved = [r for r in reports if r.solved]
    n = len(reports)
    times = [r.wall_time_s if r.solved else timeout_s for r in reports]
    return {
        "instances": n,
        "total": len(solved),
        "safe": sum(r.verdict == "sat" for r in reports),
        "unsafe": sum(r.verdict == "unsat" for r in reports),
        "percentage": 100.0 * len(solved) / n if n else 0.0,
        "avg_t": sum(times) / n if n else 0.0,
        "avg_t_solved": sum(r.wall_time_s for r in solved) / len(solved) if solved else 0.0,
        "unverified": sum(r.solved and not r.verified for r in reports),
    }


def run_suite(directory, cfg: RunConfig, jobs: int = 1, repeats: int = 1,
              out=None) -> tuple[dict, list[InstanceReport]]:
    """Run every instance in `directory` `repeats` times with seeds
    cfg.seed, cfg.seed+1, ... and keep the best run of each."""
    files = instances(directory)
    tasks = [(str(f), replace(cfg, seed=cfg.seed + k)) for f in files for k in range(max(1, repeats))]
    # one fresh process per run: z3 term ordering depends on what the
    # process built before, so sharing workers would make reports depend
    # on scheduling
    results = []
    if tasks:
        ctx = mp.get_context("spawn")
        with ctx.Pool(max(1, jobs), maxtasksperchild=1) as pool:
            results = pool.map(_job, tasks, chunksize=1)
    best: dict[str, InstanceReport] = {}
    for r in results:
        best[r.path] = _better(best[r.path], r) if r.path in best else r
    reports = [best[str(f)] for f in files]
    summary = summarize(reports, cfg.timeout_s)
    if out is not None:
        write_stats(out, reports, summary, cfg)
    return summary, reports


def _cfg_json(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["strategy"] = cfg.strategy.value
    return d


def write_stats(out, reports, summary=None, cfg: RunConfig | None = None) -> None:
    """JSON lines: a versioned header, one line per instance, then the
    summary (if any)."""
    close = False
    if isinstance(out, (str, Path)):
        out, close = open(out, "w"), True
    try:
        header = {"format": STATS_FORMAT, "version": STATS_VERSION, "z3": z3.get_version_string()}
        if cfg is not None:
            header["config"] = _cfg_json(cfg)
        out.write(json.dumps(header) + "\n")
        for r in reports:
            out.write(json.dumps({"instance": r.to_json()}, default=str) + "\n")
        if summary is not None:
            out.write(json.dumps({"summary": summary}) + "\n")
    finally:
        if close:
            out.close()
