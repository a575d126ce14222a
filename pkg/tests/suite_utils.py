"""Shared helpers for the test and acceptance suites.

The batch evaluators here re-derive semantics directly from forward passes of
the network (no solver involvement), so they can serve as ground truth for the
solver and the verification drivers.
"""

import numpy as np

from eeverify import SynthSpec, gen_synthetic, make_query, softmax
from eeverify.network import exit_logits_batch
from eeverify.solver import AtomKind


def conj_holds_batch(net, X, conj) -> np.ndarray:
    """Exact truth of a conjunction at every row of X (same strictness as the
    solver's pointwise evaluation, but vectorized)."""
    per_exit, last = exit_logits_batch(net, X)
    probs = {e: softmax(lg) for e, lg in enumerate(per_exit)}
    ok = np.ones(X.shape[0], dtype=bool)
    for atom in conj.atoms:
        if atom.kind is AtomKind.PROB_GT:
            ok &= probs[atom.exit][:, atom.cls] > atom.bound
        elif atom.kind is AtomKind.PROB_LT:
            ok &= probs[atom.exit][:, atom.cls] < atom.bound
        elif atom.kind is AtomKind.NOT_ARGMAX:
            rival = np.delete(last, atom.winner, axis=1)
            ok &= np.max(rival, axis=1) >= last[:, atom.winner]
        elif atom.kind is AtomKind.ARGMAX_LOSES_TO:
            ok &= last[:, atom.cls] > last[:, atom.winner]
        else:  # pragma: no cover
            raise AssertionError(atom.kind)
    return ok


def atom_margins_batch(net, X, conj) -> np.ndarray:
    """Per-row minimum signed margin across the conjunction's atoms (positive
    means the atom holds with that slack, in its own units)."""
    per_exit, last = exit_logits_batch(net, X)
    probs = {e: softmax(lg) for e, lg in enumerate(per_exit)}
    margin = np.full(X.shape[0], np.inf)
    for atom in conj.atoms:
        if atom.kind is AtomKind.PROB_GT:
            margin = np.minimum(margin, probs[atom.exit][:, atom.cls] - atom.bound)
        elif atom.kind is AtomKind.PROB_LT:
            margin = np.minimum(margin, atom.bound - probs[atom.exit][:, atom.cls])
        elif atom.kind is AtomKind.NOT_ARGMAX:
            rival = np.delete(last, atom.winner, axis=1)
            margin = np.minimum(margin, np.max(rival, axis=1) - last[:, atom.winner])
        elif atom.kind is AtomKind.ARGMAX_LOSES_TO:
            margin = np.minimum(margin, last[:, atom.cls] - last[:, atom.winner])
    return margin


def grid_over(box, per_dim: int) -> np.ndarray:
    axes = [np.linspace(box.lo[d], box.hi[d], per_dim) for d in range(box.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_per_dim_for(ndim: int, target: int = 60) -> int:
    # keep the dense-grid oracle around 10^5 points
    return {1: 4096, 2: 320, 3: 50}.get(ndim, target)


def random_net(rng, max_exits: int = 3, min_exits: int = 0):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(2, 5))
    depth = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(3, 9, depth))
    hi = min(max_exits, depth)
    n_exits = int(rng.integers(min(min_exits, hi), hi + 1))
    positions = tuple(sorted(rng.choice(depth, size=n_exits, replace=False).tolist()))
    thresholds = tuple(float(t) for t in rng.uniform(0.6, 0.95, n_exits))
    scale = float(rng.uniform(0.4, 1.4))
    seed = int(rng.integers(0, 2**31))
    return gen_synthetic(seed, SynthSpec(n, m, widths, positions, thresholds,
                                         weight_scale=scale))


def flip_radius(net, x, winner, lo=1e-3, hi=1.5, samples=512, seed=0) -> float:
    """Approximate smallest eps whose ball contains a misclassified sample
    (hi when none is found at the largest radius)."""
    from eeverify import infer_batch

    rng = np.random.default_rng(seed)
    if _has_flip(net, x, winner, hi, rng, samples) is False:
        return hi
    for _ in range(24):
        mid = (lo * hi) ** 0.5
        if _has_flip(net, x, winner, mid, rng, samples):
            hi = mid
        else:
            lo = mid
    return hi


def _has_flip(net, x, winner, eps, rng, samples) -> bool:
    from eeverify import infer_batch

    X = rng.uniform(x - eps, x + eps, size=(samples, x.shape[0]))
    _, classes = infer_batch(net, X)
    return bool(np.any(classes != winner))


def random_instance(rng, eps_factors=(0.25, 0.45, 0.7, 1.4, 2.5, 4.0), eps_cap=1.0,
                    **net_kwargs):
    """A random network plus a query whose radius is placed a controlled factor
    away from the sampled flip radius, spanning both verdicts while avoiding
    the knife edge."""
    net = random_net(rng, **net_kwargs)
    x = rng.uniform(-1.0, 1.0, net.input_dim)
    q0 = make_query(net, x, 0.0)
    radius = flip_radius(net, x, q0.winner, seed=int(rng.integers(0, 2**31)))
    factor = float(rng.choice(eps_factors))
    eps = float(min(max(radius * factor, 1e-3), eps_cap))
    return make_query(net, x, eps)


# ---------------------------------------------------------------------------
# Constructed suites for the speedup / trace-stability / threshold criteria
# ---------------------------------------------------------------------------

def stable_exit_instance(rng, n=3, width=12, depth=4, eps=0.15, threshold=0.9,
                         head_scale=0.7, margin=0.025, backbone_scale=0.9,
                         deep_gain=2.0, num_classes=4):
    """A query whose first-exit gate provably fires with the winner everywhere
    in the ball (sampled margin above the threshold), while deeper layers are
    loose enough that bounds there stay inconclusive: the break probe resolves
    it at the first exit, the exhaustive loop pays for every deeper query.

    Returns None when the random draw cannot reach the margin target.
    """
    from eeverify import AffineLayer, EENetwork, ExitHead

    seed = int(rng.integers(0, 2**31))
    base = gen_synthetic(seed, SynthSpec(n, num_classes, (width,) * depth, (0, 1),
                                         (threshold, threshold),
                                         weight_scale=backbone_scale))
    layers = [base.layers[0]] + [AffineLayer(l.weights * deep_gain, l.bias)
                                 for l in base.layers[1:]]
    e1 = base.exits[1]
    exit1 = ExitHead(e1.after_layer, e1.weights * 4.0, e1.bias, threshold)
    x = rng.uniform(-1, 1, n)
    X = rng.uniform(x - eps, x + eps, size=(6000, n))
    H = np.maximum(X @ layers[0].weights.T + layers[0].bias, 0.0)
    V = rng.uniform(-head_scale, head_scale, size=(num_classes, width))
    L = H @ V.T
    bias = np.zeros(num_classes)

    def min_winner_prob(beta):
        b = bias.copy()
        b[0] = beta
        return float(np.min(softmax(L + b)[:, 0]))

    lo_b, hi_b = 0.0, 60.0
    if min_winner_prob(hi_b) < threshold + margin:
        return None
    for _ in range(50):
        mid = (lo_b + hi_b) / 2
        if min_winner_prob(mid) < threshold + margin:
            lo_b = mid
        else:
            hi_b = mid
    bias[0] = hi_b
    net = EENetwork(n, num_classes, tuple(layers),
                    (ExitHead(0, V, bias, threshold), exit1))
    from eeverify import infer

    q = make_query(net, x, eps)
    if q.winner != 0 or infer(net, x).exit_index != 0:
        return None
    return q


def build_sweep_net(seed=2025):
    """Net for the threshold sweep: one gate off the first layer, deep layers
    loose enough that full-depth verification visibly costs more."""
    from eeverify import AffineLayer, EENetwork, ExitHead

    rng = np.random.default_rng(seed)
    m, width, n = 3, 10, 2
    base = gen_synthetic(seed, SynthSpec(n, m, (width,) * 3, (0,), (0.9,),
                                         weight_scale=0.9))
    layers = [base.layers[0]] + [AffineLayer(l.weights * 2.0, l.bias)
                                 for l in base.layers[1:]]
    V = rng.uniform(-1.2, 1.2, size=(m, width))
    b = rng.uniform(-0.3, 0.3, size=m)
    return EENetwork(n, m, tuple(layers), (ExitHead(0, V, b, 0.9),))


def pick_sweep_inputs(net, eps=0.08, seed=3, per_bucket=4):
    """Inputs whose sampled worst-case gate confidence spans the sweep's
    thresholds, restricted to points with a modest final-layer margin so that
    deep verification is non-trivial but decidable."""
    rng = np.random.default_rng(seed)
    cands = rng.uniform(-1.5, 1.5, size=(10_000, net.input_dim))
    _, last_all = exit_logits_batch(net, cands)
    winners = np.argmax(last_all, axis=1)
    buckets = [(0.92, 0.985), (0.75, 0.9), (0.6, 0.75)]
    counts = [0] * len(buckets)
    sel = []
    for ci, (x, w) in enumerate(zip(cands, winners)):
        X = rng.uniform(x - eps, x + eps, size=(400, net.input_dim))
        per_exit, last = exit_logits_batch(net, X)
        gate_min = float(softmax(per_exit[0])[:, w].min())
        rival = np.delete(last, w, axis=1).max(axis=1)
        last_margin = float((last[:, w] - rival).min())
        if not 0.03 < last_margin < 1.0:
            continue
        for bi, (lo, hi) in enumerate(buckets):
            if lo < gate_min < hi and counts[bi] < per_bucket:
                counts[bi] += 1
                sel.append(ci)
                break
        if len(sel) == per_bucket * len(buckets):
            break
    return cands[sel]


def spearman(a, b) -> float:
    """Rank correlation with average ranks on ties."""
    def ranks(values):
        v = np.asarray(values, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        out = r.copy()
        for val in np.unique(v):
            mask = v == val
            out[mask] = r[mask].mean()
        return out

    ra, rb = ranks(a), ranks(b)
    ca, cb = ra - ra.mean(), rb - rb.mean()
    return float((ca * cb).sum() / np.sqrt((ca * ca).sum() * (cb * cb).sum()))


def misclassified_fraction(q, samples: int = 4096, seed: int = 0) -> float:
    """Sampled volume fraction of the ball that early-exit inference
    misclassifies; a proxy for how quickly a counterexample search can land."""
    from eeverify import infer_batch

    rng = np.random.default_rng(seed)
    box = q.box()
    X = rng.uniform(box.lo, box.hi, size=(samples, box.ndim))
    _, classes = infer_batch(q.net, X)
    return float(np.mean(classes != q.winner))
