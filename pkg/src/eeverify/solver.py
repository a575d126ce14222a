"""Branch-and-bound satisfiability over a box of inputs.

``solve`` decides whether a conjunction of exit-score constraints has a
satisfying input inside a box.  Pruning uses interval bounds, witnesses come
from exact evaluation at box centers, and splitting always halves the widest
dimension.  Both answers are proofs: SAT returns a checked witness, UNSAT means
every sub-box was refuted.  UNKNOWN appears only at the resolution floor
(boxes thinner than delta that neither prove nor refute) or when the budget or
deadline runs out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .intervals import BoxDomain, LayerBounds, get_engine, propagate, softmax_prob_bounds
from .network import LAST, EENetwork, ExitId, forward_logits, softmax


class AtomKind(str, Enum):
    PROB_GT = "prob_gt"
    PROB_LT = "prob_lt"
    NOT_ARGMAX = "not_argmax"
    ARGMAX_LOSES_TO = "argmax_loses_to"


@dataclass(frozen=True)
class Atom:
    """One constraint on the scores of a single exit.

    prob_gt / prob_lt bound the SoftMax probability of ``cls`` at an early
    exit (strictly).  not_argmax holds when some rival ties or beats the
    ``winner`` logit at the final layer; argmax_loses_to when ``cls`` strictly
    beats it there.
    """

    kind: AtomKind
    exit: ExitId
    cls: Optional[int] = None
    bound: Optional[float] = None
    winner: Optional[int] = None

    @staticmethod
    def prob_gt(exit_id: ExitId, cls: int, bound: float) -> "Atom":
        return Atom(AtomKind.PROB_GT, exit_id, cls=cls, bound=float(bound))

    @staticmethod
    def prob_lt(exit_id: ExitId, cls: int, bound: float) -> "Atom":
        return Atom(AtomKind.PROB_LT, exit_id, cls=cls, bound=float(bound))

    @staticmethod
    def not_argmax(winner: int) -> "Atom":
        return Atom(AtomKind.NOT_ARGMAX, LAST, winner=winner)

    @staticmethod
    def argmax_loses_to(winner: int, cls: int) -> "Atom":
        return Atom(AtomKind.ARGMAX_LOSES_TO, LAST, cls=cls, winner=winner)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "exit": self.exit,
            "class": self.cls,
            "bound": self.bound,
            "winner": self.winner,
        }


@dataclass(frozen=True)
class Conjunction:
    """A set of atoms that must hold simultaneously."""

    atoms: tuple

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ValueError("a conjunction needs at least one atom")

    def to_json_dict(self) -> dict:
        return {"atoms": [a.to_json_dict() for a in self.atoms]}


class SolveStatus(str, Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


class AtomStatus(Enum):
    ALWAYS = "always"
    NEVER = "never"
    MAYBE = "maybe"


@dataclass
class SolveStats:
    subproblems: int = 0
    max_depth: int = 0
    wall_time_s: float = 0.0
    residuals: int = 0


@dataclass(frozen=True)
class SolveResult:
    status: SolveStatus
    witness: Optional[np.ndarray]
    stats: SolveStats


@dataclass(frozen=True)
class SolverConfig:
    """delta is the minimum box width before a sub-box is abandoned as
    unresolvable; max_subproblems caps the number of boxes explored; deadline
    (time.monotonic seconds) converts long runs into UNKNOWN.  The search is
    sequential depth-first (left half first) in both modes, so deterministic
    is descriptive here; batch-level parallelism lives in the CLI.
    """

    delta: float = 1e-4
    max_subproblems: int = 1_000_000
    deterministic: bool = True
    method: str = "ibp"
    deadline: Optional[float] = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.max_subproblems < 1:
            raise ValueError("max_subproblems must be positive")


def _atom_depth(net: EENetwork, atom: Atom) -> int:
    """Backbone prefix length needed to bound this atom."""
    if atom.exit == LAST:
        return net.num_layers
    return net.exits[atom.exit].after_layer + 1


def required_depth(net: EENetwork, conj: Conjunction) -> int:
    return max(_atom_depth(net, a) for a in conj.atoms)


def eval_atoms_exact(net: EENetwork, x, conj: Conjunction) -> bool:
    """Whether every atom holds at x under exact (float64) forward evaluation."""
    x = np.asarray(x, dtype=np.float64)
    cache = {}

    def logits_at(exit_id):
        if exit_id not in cache:
            cache[exit_id] = forward_logits(net, x, exit_id)
        return cache[exit_id]

    for atom in conj.atoms:
        if atom.kind is AtomKind.PROB_GT:
            if not softmax(logits_at(atom.exit))[atom.cls] > atom.bound:
                return False
        elif atom.kind is AtomKind.PROB_LT:
            if not softmax(logits_at(atom.exit))[atom.cls] < atom.bound:
                return False
        elif atom.kind is AtomKind.NOT_ARGMAX:
            logits = logits_at(LAST)
            rival = np.arange(logits.shape[0]) != atom.winner
            if not np.any(logits[rival] >= logits[atom.winner]):
                return False
        elif atom.kind is AtomKind.ARGMAX_LOSES_TO:
            logits = logits_at(LAST)
            if not logits[atom.cls] > logits[atom.winner]:
                return False
        else:  # pragma: no cover
            raise ValueError(f"unknown atom kind {atom.kind}")
    return True


def atom_status(atom: Atom, bounds: LayerBounds) -> AtomStatus:
    """Decide the atom over the whole box from interval bounds.

    ALWAYS and NEVER are proofs (the enclosure forces the atom's truth value at
    every point); MAYBE means the intervals straddle the constraint.
    """
    if atom.kind in (AtomKind.PROB_GT, AtomKind.PROB_LT):
        lo, hi = bounds.exit_logits[atom.exit]
        p = softmax_prob_bounds(lo, hi, atom.cls)
        if atom.kind is AtomKind.PROB_GT:
            if p.lo > atom.bound:
                return AtomStatus.ALWAYS
            if p.hi <= atom.bound:
                return AtomStatus.NEVER
        else:
            if p.hi < atom.bound:
                return AtomStatus.ALWAYS
            if p.lo >= atom.bound:
                return AtomStatus.NEVER
        return AtomStatus.MAYBE

    lo, hi = bounds.last_logits()
    w = atom.winner
    if atom.kind is AtomKind.NOT_ARGMAX:
        rival = np.arange(lo.shape[0]) != w
        if np.any(lo[rival] >= hi[w]):
            return AtomStatus.ALWAYS
        if np.all(hi[rival] < lo[w]):
            return AtomStatus.NEVER
        return AtomStatus.MAYBE
    if atom.kind is AtomKind.ARGMAX_LOSES_TO:
        i = atom.cls
        if lo[i] > hi[w]:
            return AtomStatus.ALWAYS
        if hi[i] <= lo[w]:
            return AtomStatus.NEVER
        return AtomStatus.MAYBE
    raise ValueError(f"unknown atom kind {atom.kind}")  # pragma: no cover


def _box_statuses(net: EENetwork, box: BoxDomain, groups, stages, method: str):
    """Evaluate atom statuses stage by stage, stopping early on the first NEVER.

    Returns (pruned, all_always).  Propagation never goes deeper than the first
    refuted stage, so queries about shallow exits stay cheap even inside
    conjunctions that also mention the final layer.
    """
    eng = get_engine(net)
    lo, hi = box.lo, box.hi
    pre, post, exit_logits = [], [], {}
    all_always = True
    for i in range(stages[-1]):
        lo, hi = eng.step(i, lo, hi)
        pre.append((lo, hi))
        if i < net.num_layers - 1:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        post.append((lo, hi))
        for e in eng.exits_at.get(i, ()):
            exit_logits[e] = eng.head_step(e, lo, hi)
        depth = i + 1
        if depth in groups:
            bounds = LayerBounds(tuple(pre), tuple(post), exit_logits, depth, net.num_layers)
            for atom in groups[depth]:
                st = atom_status(atom, bounds)
                if st is AtomStatus.NEVER:
                    return True, False
                if st is not AtomStatus.ALWAYS:
                    all_always = False
    return False, all_always


def solve(net: EENetwork, box: BoxDomain, conj: Conjunction, cfg: SolverConfig) -> SolveResult:
    """Search the box for a point satisfying the conjunction.

    Per box: prune if any atom is refuted by bounds; accept the whole box if
    every atom is forced (the center then serves as the witness and must pass
    exact evaluation); otherwise probe the center exactly, and split the widest
    dimension unless it is already below delta, in which case the box is set
    aside as a residual.  UNSAT requires the worklist drained with no residuals.
    """
    t0 = time.perf_counter()
    stats = SolveStats()

    if cfg.method != "ibp":
        return _solve_generic(net, box, conj, cfg, t0, stats)

    groups = {}
    for atom in conj.atoms:
        groups.setdefault(_atom_depth(net, atom), []).append(atom)
    stages = sorted(groups)

    stack = [(box, 0)]
    while stack:
        if cfg.deadline is not None and time.monotonic() > cfg.deadline:
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.UNKNOWN, None, stats)
        if stats.subproblems >= cfg.max_subproblems:
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.UNKNOWN, None, stats)
        cur, depth = stack.pop()
        stats.subproblems += 1
        stats.max_depth = max(stats.max_depth, depth)

        pruned, all_always = _box_statuses(net, cur, groups, stages, cfg.method)
        if pruned:
            continue
        center = cur.center()
        if all_always:
            if not eval_atoms_exact(net, center, conj):
                raise AssertionError(
                    "soundness violation: bounds forced the conjunction but the center fails it"
                )
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.SAT, center, stats)
        if eval_atoms_exact(net, center, conj):
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.SAT, center, stats)
        if cur.max_width() <= cfg.delta:
            stats.residuals += 1
            continue
        left, right = cur.split(cur.widest_dim())
        stack.append((right, depth + 1))
        stack.append((left, depth + 1))

    stats.wall_time_s = time.perf_counter() - t0
    if stats.residuals == 0:
        return SolveResult(SolveStatus.UNSAT, None, stats)
    return SolveResult(SolveStatus.UNKNOWN, None, stats)


def _solve_generic(net, box, conj, cfg, t0, stats):
    """Same search with a whole-prefix propagation per box; used for the
    optional tighter relaxation, which has no incremental form."""
    depth_needed = required_depth(net, conj)
    exhausted = False
    stack = [(box, 0)]
    while stack:
        if (cfg.deadline is not None and time.monotonic() > cfg.deadline) or (
            stats.subproblems >= cfg.max_subproblems
        ):
            exhausted = True
            break
        cur, depth = stack.pop()
        stats.subproblems += 1
        stats.max_depth = max(stats.max_depth, depth)

        bounds = propagate(net, cur, depth=depth_needed, method=cfg.method)
        statuses = [atom_status(a, bounds) for a in conj.atoms]
        if any(s is AtomStatus.NEVER for s in statuses):
            continue
        center = cur.center()
        if all(s is AtomStatus.ALWAYS for s in statuses):
            if not eval_atoms_exact(net, center, conj):
                raise AssertionError(
                    "soundness violation: bounds forced the conjunction but the center fails it"
                )
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.SAT, center, stats)
        if eval_atoms_exact(net, center, conj):
            stats.wall_time_s = time.perf_counter() - t0
            return SolveResult(SolveStatus.SAT, center, stats)
        if cur.max_width() <= cfg.delta:
            stats.residuals += 1
            continue
        left, right = cur.split(cur.widest_dim())
        stack.append((right, depth + 1))
        stack.append((left, depth + 1))

    stats.wall_time_s = time.perf_counter() - t0
    if not exhausted and stats.residuals == 0:
        return SolveResult(SolveStatus.UNSAT, None, stats)
    return SolveResult(SolveStatus.UNKNOWN, None, stats)
