"""Construction of the sub-queries a robustness check decomposes into.

A counterexample must make some runner-up win at some exit while the winner
fails every earlier gate; each (exit, runner-up) pair yields one conjunction.
The break and continue probes are the one-call shortcuts: break asks whether
the winner can ever miss a gate, continue asks whether its score can drop low
enough for any rival to clear one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .intervals import BoxDomain, ball
from .network import LAST, EENetwork, ExitId, infer
from .solver import Atom, Conjunction


@dataclass(frozen=True)
class QuerySpec:
    """One robustness question: is the prediction at x stable over the eps-ball?

    ``winner`` is always the early-exit prediction at the center, so build
    instances through :func:`make_query`.
    """

    net: EENetwork
    x: np.ndarray
    eps: float
    winner: int
    clip: Optional[tuple] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        predicted = infer(self.net, x).predicted_class
        if self.winner != predicted:
            raise ValueError(
                f"winner {self.winner} is not the center's prediction {predicted}"
            )

    def box(self) -> BoxDomain:
        return ball(self.x, self.eps, self.clip)


def make_query(net: EENetwork, x, eps: float, clip=None) -> QuerySpec:
    winner = infer(net, x).predicted_class
    return QuerySpec(net, np.asarray(x, dtype=np.float64), float(eps), winner, clip)


def _prior_exit_atoms(q: QuerySpec, k: ExitId) -> list:
    """The winner fails every gate strictly before exit k (all gates for LAST)."""
    net = q.net
    upto = net.num_exits if k == LAST else k
    return [
        Atom.prob_lt(e, q.winner, net.exits[e].threshold)
        for e in range(upto)
    ]


def runner_up_query(q: QuerySpec, k: ExitId, i: int) -> Conjunction:
    """Runner-up i wins at exit k and the winner fired no earlier gate.

    At an early exit, winning means clearing that exit's threshold; at the
    final layer it means strictly beating the winner's logit.
    """
    k = q.net.check_exit_id(k)
    if i == q.winner:
        raise ValueError("runner-up must differ from the winner")
    if k == LAST:
        atoms = [Atom.argmax_loses_to(q.winner, i)]
    else:
        atoms = [Atom.prob_gt(k, i, q.net.exits[k].threshold)]
    return Conjunction(tuple(atoms + _prior_exit_atoms(q, k)))


def break_query(q: QuerySpec, k: ExitId) -> Conjunction:
    """Can the winner fail to prevail at exit k?

    UNSAT at an early exit means every input clears that gate with the winner,
    so nothing flows deeper; UNSAT at the final layer means no rival ever ties
    or beats the winner there.
    """
    k = q.net.check_exit_id(k)
    if k == LAST:
        return Conjunction((Atom.not_argmax(q.winner),))
    return Conjunction((Atom.prob_lt(k, q.winner, q.net.exits[k].threshold),))


def continue_check(q: QuerySpec, k: ExitId) -> Conjunction:
    """Can the winner's score at exit k drop below 1 - T?

    UNSAT keeps every rival below T (probabilities sum to 1), so the per-class
    loop at k can be skipped.  Undefined for the final layer, where being the
    maximum gives no such guarantee.
    """
    k = q.net.check_exit_id(k)
    if k == LAST:
        raise ValueError("the continue probe applies to early exits only")
    return Conjunction((Atom.prob_lt(k, q.winner, 1.0 - q.net.exits[k].threshold),))


def vanilla_query(q: QuerySpec, i: int) -> Conjunction:
    """Plain negated robustness at the final layer, all gating ignored."""
    if i == q.winner:
        raise ValueError("runner-up must differ from the winner")
    return Conjunction((Atom.argmax_loses_to(q.winner, i),))


@dataclass(frozen=True)
class NegatedRobustness:
    """The full counterexample condition, expanded branch by branch.

    ``branches`` lists (exit, runner_up, conjunction) over every exit (in
    order) and every rival class; their disjunction is what the verification
    algorithms decide.
    """

    query: QuerySpec
    branches: tuple


def negated_robustness(q: QuerySpec) -> NegatedRobustness:
    rivals = [i for i in range(q.net.num_classes) if i != q.winner]
    branches = [
        (k, i, runner_up_query(q, k, i))
        for k in q.net.exit_ids()
        for i in rivals
    ]
    return NegatedRobustness(q, tuple(branches))
