"""Sound interval enclosures over a box of inputs.

This is the pruning engine for the branch-and-bound solver: plain interval
arithmetic through the affine/ReLU chain (weights split by sign), exit-head
logit bounds at any prefix depth, and a coupled SoftMax probability bound that
is exact on point boxes.

An optional back-substituting affine relaxation is available behind the same
contract (``method="affine"``); it tightens bounds but is off by default, since
splitting, not tightness, provides completeness at the scales this engine
targets.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .network import EENetwork


class Interval(NamedTuple):
    lo: float
    hi: float


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned input region: per-dimension closed intervals."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box has an empty dimension (lo > hi)")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def ndim(self) -> int:
        return self.lo.shape[0]

    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def widest_dim(self) -> int:
        return int(np.argmax(self.hi - self.lo))

    def max_width(self) -> float:
        return float(np.max(self.hi - self.lo))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def split(self, dim: int):
        """Halve the box at the midpoint of ``dim``; returns (lower, upper) halves."""
        mid = 0.5 * (self.lo[dim] + self.hi[dim])
        left_hi = self.hi.copy()
        left_hi[dim] = mid
        right_lo = self.lo.copy()
        right_lo[dim] = mid
        return BoxDomain(self.lo, left_hi), BoxDomain(right_lo, self.hi)

    def dims(self) -> list:
        return [Interval(float(l), float(h)) for l, h in zip(self.lo, self.hi)]


def ball(x, eps: float, clip=None) -> BoxDomain:
    """The l-inf ball of radius eps around x, intersected with an optional clip range.

    ``clip`` is a (lo, hi) pair, scalar or per-dimension.  Raises if the
    intersection is empty in any dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    lo = x - eps
    hi = x + eps
    if clip is not None:
        clo, chi = clip
        lo = np.maximum(lo, clo)
        hi = np.minimum(hi, chi)
        if np.any(lo > hi):
            raise ValueError("ball is empty after clipping")
    return BoxDomain(lo, hi)


@dataclass(frozen=True)
class LayerBounds:
    """Interval vectors for every computed layer and exit head.

    ``pre`` and ``post`` hold (lo, hi) pairs per backbone layer (post applies
    the ReLU clamp; the final layer has none, so its post equals its pre).
    ``exit_logits`` maps exit ordinals to (lo, hi) logit bounds.  ``depth`` is
    the number of backbone layers covered out of ``num_layers``; deeper values
    were not computed.
    """

    pre: tuple
    post: tuple
    exit_logits: dict
    depth: int
    num_layers: int

    def last_logits(self):
        if self.depth < self.num_layers:
            raise ValueError("bounds were not propagated to the final layer")
        return self.pre[-1]


class _SignSplit(NamedTuple):
    pos: np.ndarray
    neg: np.ndarray
    bias: np.ndarray


class _Engine:
    """Per-network cache of sign-split weight matrices."""

    def __init__(self, net: EENetwork):
        self.net = net
        self.layers = [
            _SignSplit(np.maximum(l.weights, 0.0), np.minimum(l.weights, 0.0), l.bias)
            for l in net.layers
        ]
        self.heads = [
            _SignSplit(np.maximum(h.weights, 0.0), np.minimum(h.weights, 0.0), h.bias)
            for h in net.exits
        ]
        self.exits_at = {}
        for e, head in enumerate(net.exits):
            self.exits_at.setdefault(head.after_layer, []).append(e)

    def step(self, i: int, lo: np.ndarray, hi: np.ndarray):
        s = self.layers[i]
        out_lo = s.pos @ lo + s.neg @ hi + s.bias
        out_hi = s.pos @ hi + s.neg @ lo + s.bias
        return out_lo, out_hi

    def head_step(self, e: int, lo: np.ndarray, hi: np.ndarray):
        s = self.heads[e]
        return s.pos @ lo + s.neg @ hi + s.bias, s.pos @ hi + s.neg @ lo + s.bias


@functools.lru_cache(maxsize=64)
def get_engine(net: EENetwork) -> _Engine:
    """Cached sign-split matrices for a network (identity-keyed; nets are immutable)."""
    return _Engine(net)


def propagate(net: EENetwork, box: BoxDomain, depth: Optional[int] = None,
              method: str = "ibp") -> LayerBounds:
    """Sound per-neuron bounds over ``box`` for the first ``depth`` backbone layers
    (default: all of them) and every exit head within that prefix.
    """
    if box.ndim != net.input_dim:
        raise ValueError(f"box has {box.ndim} dims, network expects {net.input_dim}")
    if depth is None:
        depth = net.num_layers
    if not 1 <= depth <= net.num_layers:
        raise ValueError(f"depth must be in [1, {net.num_layers}]")
    if method == "ibp":
        bounds = _propagate_ibp(net, box, depth)
    elif method == "affine":
        bounds = _propagate_affine(net, box, depth)
    else:
        raise ValueError(f"unknown propagation method: {method!r}")
    for lo, hi in list(bounds.pre) + list(bounds.exit_logits.values()):
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise FloatingPointError("bound propagation overflowed")
    return bounds


def _propagate_ibp(net: EENetwork, box: BoxDomain, depth: int) -> LayerBounds:
    eng = get_engine(net)
    lo, hi = box.lo, box.hi
    pre, post, exit_logits = [], [], {}
    for i in range(depth):
        lo, hi = eng.step(i, lo, hi)
        pre.append((lo, hi))
        if i < net.num_layers - 1:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        post.append((lo, hi))
        for e in eng.exits_at.get(i, ()):
            exit_logits[e] = eng.head_step(e, lo, hi)
    return LayerBounds(tuple(pre), tuple(post), exit_logits, depth, net.num_layers)


def _propagate_affine(net: EENetwork, box: BoxDomain, depth: int) -> LayerBounds:
    """Back-substituting linear relaxation, intersected with plain IBP.

    Each neuron keeps lower/upper linear forms in the input; ReLUs are relaxed
    with the standard slope u/(u-l) upper line and a 0-or-identity lower line.
    Concretization over the box gives bounds at least as tight as IBP (the
    intersection enforces it), and identical on point boxes.
    """
    ibp = _propagate_ibp(net, box, depth)
    n = net.input_dim
    # Linear forms: rows of (A, c) represent A x + c for the post-activation values.
    A = np.eye(n)
    cl = np.zeros(n)
    Au = np.eye(n)
    cu = np.zeros(n)

    def concretize(Alo, blo, Ahi, bhi):
        lo = np.maximum(Alo, 0.0) @ box.lo + np.minimum(Alo, 0.0) @ box.hi + blo
        hi = np.maximum(Ahi, 0.0) @ box.hi + np.minimum(Ahi, 0.0) @ box.lo + bhi
        return lo, hi

    def compose(W, b, Alo, blo, Ahi, bhi):
        Wp = np.maximum(W, 0.0)
        Wn = np.minimum(W, 0.0)
        new_Alo = Wp @ Alo + Wn @ Ahi
        new_blo = Wp @ blo + Wn @ bhi + b
        new_Ahi = Wp @ Ahi + Wn @ Alo
        new_bhi = Wp @ bhi + Wn @ blo + b
        return new_Alo, new_blo, new_Ahi, new_bhi

    pre, post, exit_logits = [], [], {}
    eng = get_engine(net)
    for i, layer in enumerate(net.layers[:depth]):
        A, cl, Au, cu = compose(layer.weights, layer.bias, A, cl, Au, cu)
        lo, hi = concretize(A, cl, Au, cu)
        ilo, ihi = ibp.pre[i]
        lo, hi = np.maximum(lo, ilo), np.minimum(hi, ihi)
        pre.append((lo, hi))
        if i < net.num_layers - 1:
            # ReLU relaxation per neuron, applied to the linear forms.
            crossing = (lo < 0) & (hi > 0)
            dead = hi <= 0
            up_slope = np.ones_like(hi)
            up_off = np.zeros_like(hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = np.where(crossing, hi / (hi - lo), 1.0)
            up_slope = np.where(crossing, lam, up_slope)
            up_off = np.where(crossing, -lam * lo, up_off)
            up_slope = np.where(dead, 0.0, up_slope)
            low_slope = np.where(lo >= 0, 1.0, 0.0)
            A = low_slope[:, None] * A
            cl = low_slope * cl
            Au = up_slope[:, None] * Au
            cu = up_slope * cu + up_off
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        post.append((lo, hi))
        for e in eng.exits_at.get(i, ()):
            head = net.exits[e]
            hAlo, hblo, hAhi, hbhi = compose(head.weights, head.bias, A, cl, Au, cu)
            elo, ehi = concretize(hAlo, hblo, hAhi, hbhi)
            iblo, ibhi = ibp.exit_logits[e]
            exit_logits[e] = (np.maximum(elo, iblo), np.minimum(ehi, ibhi))
    return LayerBounds(tuple(pre), tuple(post), exit_logits, depth, net.num_layers)


def softmax_prob_bounds(logit_lo: np.ndarray, logit_hi: np.ndarray, cls: int) -> Interval:
    """Sound enclosure of the SoftMax probability of ``cls`` from per-logit intervals.

    Couples the signs: the probability is minimized when the class logit sits at
    its lower bound and every rival at its upper bound, and symmetrically for
    the maximum.  Exact when all intervals are points.
    """
    m = logit_lo.shape[0]
    if m < 2:
        raise ValueError("need at least two classes")
    rival = np.arange(m) != cls

    shift = max(logit_lo[cls], float(np.max(logit_hi[rival])))
    lo = np.exp(logit_lo[cls] - shift) / (
        np.exp(logit_lo[cls] - shift) + np.sum(np.exp(logit_hi[rival] - shift))
    )
    shift = max(logit_hi[cls], float(np.max(logit_lo[rival])))
    hi = np.exp(logit_hi[cls] - shift) / (
        np.exp(logit_hi[cls] - shift) + np.sum(np.exp(logit_lo[rival] - shift))
    )
    return Interval(float(lo), float(hi))
