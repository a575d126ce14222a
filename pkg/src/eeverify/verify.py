"""Robustness verification drivers for early-exit networks.

Five interchangeable strategies over the same sub-query decomposition:

* ``baseline``  - every (exit, runner-up) pair, in order.
* ``break``     - before each exit's runner-up loop, try to show the winner
                  always prevails there; success ends the whole run SAFE.
* ``continue``  - before each early exit's loop, try to show no rival can
                  clear the gate there; success skips that loop.
* ``combined``  - break first, then continue, at every exit.
* ``vanilla``   - plain last-layer robustness with all gating ignored.

All return a RunRecord carrying the verdict plus instrumentation (solver
calls, subproblem totals, per-exit breakdown, the exit where the run
concluded).  A sub-query UNKNOWN never stops the counterexample search, but
SAFE is only declared when no decomposition query was left unresolved.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .network import LAST, ExitId, forward_logits, infer
from .queries import (
    QuerySpec,
    break_query,
    continue_check,
    runner_up_query,
    vanilla_query,
)
from .solver import Conjunction, SolveStatus, SolverConfig, solve


class VerdictStatus(str, Enum):
    SAFE = "SAFE"
    UNSAFE = "UNSAFE"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    counterexample: Optional[np.ndarray] = None
    cex_exit: Optional[ExitId] = None
    cex_class: Optional[int] = None


@dataclass(frozen=True)
class RunRecord:
    verdict: Verdict
    algorithm: str
    wall_time_s: float
    solver_calls: int
    subproblems_total: int
    verification_exit: ExitId
    per_exit: dict
    calls_by_kind: dict
    unknown_subqueries: int

    def to_json_dict(self) -> dict:
        cex = self.verdict.counterexample
        return {
            "verdict": self.verdict.status.value,
            "counterexample": None if cex is None else [float(v) for v in cex],
            "cex_exit": self.verdict.cex_exit,
            "cex_class": self.verdict.cex_class,
            "algorithm": self.algorithm,
            "wall_time_s": self.wall_time_s,
            "solver_calls": self.solver_calls,
            "subproblems_total": self.subproblems_total,
            "verification_exit": self.verification_exit,
            "per_exit": {str(k): dict(v) for k, v in self.per_exit.items()},
            "calls_by_kind": dict(self.calls_by_kind),
            "unknown_subqueries": self.unknown_subqueries,
        }


class _Tracker:
    """Accumulates per-run solver accounting."""

    def __init__(self, q: QuerySpec, cfg: SolverConfig):
        self.q = q
        self.cfg = cfg
        self.box = q.box()
        self.solver_calls = 0
        self.subproblems = 0
        self.unknowns = 0
        self.unproven_routes = 0
        self.per_exit = {}
        self.calls_by_kind = {}

    def run(self, conj: Conjunction, exit_id: ExitId, kind: str):
        res = solve(self.q.net, self.box, conj, self.cfg)
        self.solver_calls += 1
        self.subproblems += res.stats.subproblems
        self.calls_by_kind[kind] = self.calls_by_kind.get(kind, 0) + 1
        slot = self.per_exit.setdefault(exit_id, {"calls": 0, "time_s": 0.0})
        slot["calls"] += 1
        slot["time_s"] += res.stats.wall_time_s
        if res.status is SolveStatus.UNKNOWN:
            self.unknowns += 1
            if kind in ("runner_up", "vanilla"):
                # A route of the counterexample decomposition stays open;
                # probe UNKNOWNs are harmless because the loops they guard run.
                self.unproven_routes += 1
        return res

    def expired(self) -> bool:
        """Deadline passed; only short-circuits once a call has been issued, so
        every record still carries at least one (instantly UNKNOWN) call."""
        if self.solver_calls == 0:
            return False
        return self.cfg.deadline is not None and time.monotonic() > self.cfg.deadline


def _validate_cex(q: QuerySpec, cex: np.ndarray, vanilla: bool) -> None:
    gap = float(np.max(np.abs(cex - q.x)))
    if gap > q.eps * (1 + 1e-9) + 1e-12:
        raise AssertionError(f"counterexample outside the eps-ball: {gap} > {q.eps}")
    if vanilla:
        predicted = int(np.argmax(forward_logits(q.net, cex, LAST)))
    else:
        predicted = infer(q.net, cex).predicted_class
    if predicted == q.winner:
        raise AssertionError("counterexample does not change the prediction")


def _finish(q, tr, t0, algorithm, status, verification_exit,
            cex=None, cex_exit=None, cex_class=None) -> RunRecord:
    if status is VerdictStatus.UNSAFE:
        _validate_cex(q, cex, vanilla=algorithm == "vanilla")
    verdict = Verdict(status, cex, cex_exit, cex_class)
    return RunRecord(
        verdict=verdict,
        algorithm=algorithm,
        wall_time_s=time.perf_counter() - t0,
        solver_calls=tr.solver_calls,
        subproblems_total=tr.subproblems,
        verification_exit=verification_exit,
        per_exit=tr.per_exit,
        calls_by_kind=tr.calls_by_kind,
        unknown_subqueries=tr.unknowns,
    )


def _rivals(q: QuerySpec):
    return [i for i in range(q.net.num_classes) if i != q.winner]


def _exists_prev_cex(q: QuerySpec, k: ExitId, tr: _Tracker):
    """The per-exit runner-up loop: first SAT wins, UNKNOWNs are remembered."""
    saw_unknown = False
    for i in _rivals(q):
        if tr.expired():
            return VerdictStatus.UNKNOWN, None, None
        res = tr.run(runner_up_query(q, k, i), k, "runner_up")
        if res.status is SolveStatus.SAT:
            return VerdictStatus.UNSAFE, res.witness, i
        if res.status is SolveStatus.UNKNOWN:
            saw_unknown = True
    return (VerdictStatus.UNKNOWN if saw_unknown else VerdictStatus.SAFE), None, None


def exists_prev_cex(q: QuerySpec, k: ExitId, cfg: Optional[SolverConfig] = None):
    """Search for a counterexample that surfaces exactly at exit k.

    Returns (status, counterexample or None): UNSAFE on the first satisfiable
    runner-up, UNKNOWN if any runner-up was unresolved, SAFE otherwise.
    """
    tr = _Tracker(q, cfg or SolverConfig())
    status, cex, _ = _exists_prev_cex(q, q.net.check_exit_id(k), tr)
    return status, cex


def verify_baseline(q: QuerySpec, cfg: Optional[SolverConfig] = None) -> RunRecord:
    """Exhaustive loop over exits and runner-ups; SAFE costs exactly
    (num_exits + 1) * (num_classes - 1) solver calls."""
    cfg = cfg or SolverConfig()
    tr = _Tracker(q, cfg)
    t0 = time.perf_counter()
    for k in q.net.exit_ids():
        if tr.expired():
            return _finish(q, tr, t0, "baseline", VerdictStatus.UNKNOWN, k)
        status, cex, cls = _exists_prev_cex(q, k, tr)
        if status is VerdictStatus.UNSAFE:
            return _finish(q, tr, t0, "baseline", status, k,
                           cex=cex, cex_exit=k, cex_class=cls)
    status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
    return _finish(q, tr, t0, "baseline", status, LAST)


def verify_break(q: QuerySpec, cfg: Optional[SolverConfig] = None) -> RunRecord:
    """Baseline plus the early-stop probe: once the winner provably prevails at
    an exit, nothing can flow deeper and the run ends there."""
    cfg = cfg or SolverConfig()
    tr = _Tracker(q, cfg)
    t0 = time.perf_counter()
    for k in q.net.exit_ids():
        if tr.expired():
            return _finish(q, tr, t0, "break", VerdictStatus.UNKNOWN, k)
        res = tr.run(break_query(q, k), k, "break")
        if res.status is SolveStatus.UNSAT:
            status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
            return _finish(q, tr, t0, "break", status, k)
        status, cex, cls = _exists_prev_cex(q, k, tr)
        if status is VerdictStatus.UNSAFE:
            return _finish(q, tr, t0, "break", status, k,
                           cex=cex, cex_exit=k, cex_class=cls)
    status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
    return _finish(q, tr, t0, "break", status, LAST)


def verify_continue(q: QuerySpec, cfg: Optional[SolverConfig] = None) -> RunRecord:
    """Baseline plus the loop-skipping probe at early exits; the final layer is
    never skipped."""
    cfg = cfg or SolverConfig()
    tr = _Tracker(q, cfg)
    t0 = time.perf_counter()
    for k in q.net.exit_ids():
        if tr.expired():
            return _finish(q, tr, t0, "continue", VerdictStatus.UNKNOWN, k)
        if k != LAST:
            res = tr.run(continue_check(q, k), k, "continue")
            if res.status is SolveStatus.UNSAT:
                continue
        status, cex, cls = _exists_prev_cex(q, k, tr)
        if status is VerdictStatus.UNSAFE:
            return _finish(q, tr, t0, "continue", status, k,
                           cex=cex, cex_exit=k, cex_class=cls)
    status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
    return _finish(q, tr, t0, "continue", status, LAST)


def verify_combined(q: QuerySpec, cfg: Optional[SolverConfig] = None) -> RunRecord:
    """Break probe first at every exit, then the continue probe at early exits,
    falling back to the runner-up loop only when neither shortcut applies."""
    cfg = cfg or SolverConfig()
    tr = _Tracker(q, cfg)
    t0 = time.perf_counter()
    for k in q.net.exit_ids():
        if tr.expired():
            return _finish(q, tr, t0, "combined", VerdictStatus.UNKNOWN, k)
        res = tr.run(break_query(q, k), k, "break")
        if res.status is SolveStatus.UNSAT:
            status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
            return _finish(q, tr, t0, "combined", status, k)
        if k != LAST:
            res = tr.run(continue_check(q, k), k, "continue")
            if res.status is SolveStatus.UNSAT:
                continue
        status, cex, cls = _exists_prev_cex(q, k, tr)
        if status is VerdictStatus.UNSAFE:
            return _finish(q, tr, t0, "combined", status, k,
                           cex=cex, cex_exit=k, cex_class=cls)
    status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
    return _finish(q, tr, t0, "combined", status, LAST)


def verify_vanilla(q: QuerySpec, cfg: Optional[SolverConfig] = None) -> RunRecord:
    """Standard negated robustness of the final layer; exits play no part."""
    cfg = cfg or SolverConfig()
    tr = _Tracker(q, cfg)
    t0 = time.perf_counter()
    for i in _rivals(q):
        if tr.expired():
            return _finish(q, tr, t0, "vanilla", VerdictStatus.UNKNOWN, LAST)
        res = tr.run(vanilla_query(q, i), LAST, "vanilla")
        if res.status is SolveStatus.SAT:
            return _finish(q, tr, t0, "vanilla", VerdictStatus.UNSAFE, LAST,
                           cex=res.witness, cex_exit=LAST, cex_class=i)
    status = VerdictStatus.UNKNOWN if tr.unproven_routes else VerdictStatus.SAFE
    return _finish(q, tr, t0, "vanilla", status, LAST)


ALGORITHMS = {
    "baseline": verify_baseline,
    "break": verify_break,
    "continue": verify_continue,
    "combined": verify_combined,
    "vanilla": verify_vanilla,
}
