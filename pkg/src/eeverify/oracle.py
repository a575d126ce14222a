"""Independent ground truth for validating the verification engine.

Everything here reasons only about exact early-exit inference (which inputs
get misclassified), never about the engine's sub-query decomposition, so
agreement between the two is evidence for the decomposition itself.  Provides
a grid/random/refinement counterexample search, a high-resolution certification
pass for low-dimensional inputs, and a sampled trace-stability estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .intervals import BoxDomain, softmax_prob_bounds, get_engine
from .network import EENetwork, LAST, exit_logits_batch, infer, infer_batch, softmax
from .queries import QuerySpec
from .solver import SolverConfig


class OracleStatus(str, Enum):
    SAFE = "SAFE"
    UNSAFE = "UNSAFE"
    UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class OracleVerdict:
    status: OracleStatus
    witness: Optional[np.ndarray]
    effort: dict


@dataclass(frozen=True)
class AttackBudget:
    random_samples: int = 2048
    grid_per_dim: int = 9
    refine_steps: int = 32

    def __post_init__(self):
        if min(self.random_samples, self.grid_per_dim, self.refine_steps) < 1:
            raise ValueError("attack budget components must be positive")


def route_scores(net: EENetwork, winner: int, X: np.ndarray) -> np.ndarray:
    """How close each input is to being a counterexample against ``winner``.

    For every way of losing (a rival clearing some gate the winner failed to
    reach first, or a rival beating the winner at the final layer) the score is
    the smallest margin of the conditions involved; the result takes the best
    way per row.  Positive means misclassified, negative means every way of
    losing is violated by at least that margin.
    """
    per_exit, last = exit_logits_batch(net, X)
    n = last.shape[0]
    best = np.full(n, -np.inf)
    prior_min = np.full(n, np.inf)  # winner must fail all earlier gates
    for e, logits in enumerate(per_exit):
        probs = softmax(logits)
        thr = net.exits[e].threshold
        rival = np.max(np.delete(probs, winner, axis=1), axis=1) - thr
        best = np.maximum(best, np.minimum(rival, prior_min))
        prior_min = np.minimum(prior_min, thr - probs[:, winner])
    rival_last = np.max(np.delete(last, winner, axis=1), axis=1) - last[:, winner]
    best = np.maximum(best, np.minimum(rival_last, prior_min))
    return best


def _grid_points(box: BoxDomain, per_dim: int, cap: int = 200_000) -> np.ndarray:
    n = box.ndim
    while per_dim > 2 and per_dim ** n > cap:
        per_dim -= 1
    if per_dim ** n > cap:
        return np.empty((0, n))
    axes = [np.linspace(box.lo[d], box.hi[d], per_dim) for d in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _first_misclassified(net: EENetwork, winner: int, X: np.ndarray):
    if X.shape[0] == 0:
        return None
    _, classes = infer_batch(net, X)
    hits = np.nonzero(classes != winner)[0]
    if hits.size:
        return X[hits[0]].copy()
    return None


def attack_search(q: QuerySpec, budget: Optional[AttackBudget] = None,
                  seed: int = 0) -> Optional[np.ndarray]:
    """Look for an input in the ball that early-exit inference misclassifies.

    Uniform grid, then uniform random samples, then coordinate descent on the
    route score starting from the most promising candidate.  Any returned
    witness is exactly misclassified; None means the search failed, not that
    none exists.
    """
    budget = budget or AttackBudget()
    box = q.box()
    rng = np.random.default_rng(seed)

    grid = _grid_points(box, budget.grid_per_dim)
    rand = rng.uniform(box.lo, box.hi, size=(budget.random_samples, box.ndim))
    candidates = np.vstack([grid, rand]) if grid.size else rand

    hit = _first_misclassified(q.net, q.winner, candidates)
    if hit is not None:
        return hit

    scores = route_scores(q.net, q.winner, candidates)
    x = candidates[int(np.argmax(scores))].copy()
    score = float(np.max(scores))
    step = box.widths() / 4.0
    for _ in range(budget.refine_steps):
        moves = []
        for d in range(box.ndim):
            if step[d] == 0:
                continue
            for s in (step[d], -step[d]):
                trial = x.copy()
                trial[d] = min(max(trial[d] + s, box.lo[d]), box.hi[d])
                moves.append(trial)
        if not moves:
            break
        moves = np.asarray(moves)
        move_scores = route_scores(q.net, q.winner, moves)
        best = int(np.argmax(move_scores))
        if move_scores[best] > score:
            x, score = moves[best].copy(), float(move_scores[best])
            if infer(q.net, x).predicted_class != q.winner:
                return x
        else:
            step *= 0.5
    return None


def _box_all_winner(net: EENetwork, box: BoxDomain, winner: int) -> bool:
    """Sound check that every input in the box is classified as the winner,
    walking exits in inference order and stopping as soon as the whole box
    provably exits with the winner."""
    eng = get_engine(net)
    lo, hi = box.lo, box.hi
    for i in range(net.num_layers - 1):
        lo, hi = eng.step(i, lo, hi)
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        for e in eng.exits_at.get(i, ()):
            elo, ehi = eng.head_step(e, lo, hi)
            thr = net.exits[e].threshold
            pw = softmax_prob_bounds(elo, ehi, winner)
            for c in range(net.num_classes):
                if c == winner:
                    continue
                pc = softmax_prob_bounds(elo, ehi, c)
                if pc.hi > thr:
                    return False  # a rival might clear this gate
            if pw.lo > thr:
                return True  # everything still flowing exits here, with the winner
    lo, hi = eng.step(net.num_layers - 1, lo, hi)
    rival = np.arange(net.num_classes) != winner
    return bool(np.all(hi[rival] < lo[winner]))


def _certify(net: EENetwork, box: BoxDomain, winner: int, cfg: SolverConfig):
    """Branch-and-bound over exact-inference misclassification (no decomposition)."""
    stack = [box]
    subproblems = 0
    residuals = 0
    while stack:
        if cfg.deadline is not None and time.monotonic() > cfg.deadline:
            return OracleStatus.UNDECIDED, None, subproblems
        if subproblems >= cfg.max_subproblems:
            return OracleStatus.UNDECIDED, None, subproblems
        cur = stack.pop()
        subproblems += 1
        center = cur.center()
        if infer(net, center).predicted_class != winner:
            return OracleStatus.UNSAFE, center, subproblems
        if _box_all_winner(net, cur, winner):
            continue
        if cur.max_width() <= cfg.delta:
            residuals += 1
            continue
        left, right = cur.split(cur.widest_dim())
        stack.append(right)
        stack.append(left)
    if residuals == 0:
        return OracleStatus.SAFE, None, subproblems
    return OracleStatus.UNDECIDED, None, subproblems


def decide_reference(q: QuerySpec, cfg: Optional[SolverConfig] = None,
                     budget: Optional[AttackBudget] = None,
                     seed: int = 0) -> OracleVerdict:
    """Reference verdict: attack first, then certify by subdivision.

    The certification pass runs 100x finer than the engine configuration (delta
    divided by 100, budget multiplied by 100) and is only available for inputs
    of dimension three or less; above that only the attack side applies.
    """
    cfg = cfg or SolverConfig()
    effort = {"grid_per_dim": (budget or AttackBudget()).grid_per_dim,
              "random_samples": (budget or AttackBudget()).random_samples,
              "subproblems": 0}
    witness = attack_search(q, budget, seed=seed)
    if witness is not None:
        return OracleVerdict(OracleStatus.UNSAFE, witness, effort)
    if q.net.input_dim > 3:
        raise ValueError("certification is refused for inputs of dimension > 3")
    oracle_cfg = SolverConfig(
        delta=cfg.delta / 100.0,
        max_subproblems=cfg.max_subproblems * 100,
        deterministic=True,
        method=cfg.method,
        deadline=cfg.deadline,
    )
    status, witness, subproblems = _certify(q.net, q.box(), q.winner, oracle_cfg)
    effort["subproblems"] = subproblems
    return OracleVerdict(status, witness, effort)


def trace_stability_estimate(q: QuerySpec, samples: int, seed: int = 0) -> float:
    """Fraction of uniform samples in the ball sharing the center's trace.

    1.0 is sampling evidence of stability, not a proof.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    box = q.box()
    rng = np.random.default_rng(seed)
    X = rng.uniform(box.lo, box.hi, size=(samples, box.ndim))
    exits, _ = infer_batch(q.net, X)
    base = infer(q.net, q.x)
    base_pos = q.net.num_exits if base.exit_index == LAST else base.exit_index
    return float(np.mean(exits == base_pos))


def sampled_route_score_max(q: QuerySpec, samples: int = 4096, seed: int = 0) -> float:
    """Estimated maximum route score over the ball (positive: a sampled point
    is misclassified; negative: every sampled point has at least that margin).

    Used to set aside boundary instances whose verdict hinges on margins
    thinner than the solver's resolution floor.
    """
    box = q.box()
    rng = np.random.default_rng(seed)
    parts = [q.x.reshape(1, -1),
             rng.uniform(box.lo, box.hi, size=(samples, box.ndim))]
    grid = _grid_points(box, 16 if box.ndim <= 3 else 4)
    if grid.size:
        parts.append(grid)
    X = np.vstack(parts)
    return float(np.max(route_scores(q.net, q.winner, X)))
