import math

import numpy as np
import pytest

from eeverify import (
    SynthSpec,
    ball,
    gen_synthetic,
    propagate,
    softmax,
    softmax_prob_bounds,
)
from eeverify.intervals import BoxDomain
from eeverify.network import exit_logits_batch

P_MARGIN_2 = math.exp(2) / (math.exp(2) + 1)  # 0.8807970779778824


def test_ball_examples():
    b = ball([0.5], 0.0)
    assert b.lo == pytest.approx([0.5]) and b.hi == pytest.approx([0.5])
    b = ball([0.5], 0.2, clip=(0.0, 1.0))
    assert b.lo == pytest.approx([0.3]) and b.hi == pytest.approx([0.7])
    b = ball([0.05], 0.2, clip=(0.0, 1.0))
    assert b.lo == pytest.approx([0.0]) and b.hi == pytest.approx([0.25])


def test_ball_empty_after_clip():
    with pytest.raises(ValueError, match="empty"):
        ball([5.0], 0.1, clip=(0.0, 1.0))
    with pytest.raises(ValueError):
        ball([0.0], -0.1)


def test_box_split_and_widest():
    box = BoxDomain(np.array([0.0, 0.0]), np.array([1.0, 4.0]))
    assert box.widest_dim() == 1
    left, right = box.split(1)
    assert left.hi[1] == 2.0 and right.lo[1] == 2.0
    assert left.lo[0] == 0.0 and right.hi[0] == 1.0


def test_propagate_fixture_examples(fixture_a):
    bounds = propagate(fixture_a, BoxDomain(np.array([2.5, -0.5]), np.array([3.5, 0.5])))
    lo, hi = bounds.exit_logits[0]
    assert lo == pytest.approx([2.5, 0.0])
    assert hi == pytest.approx([3.5, 0.5])

    bounds = propagate(fixture_a, BoxDomain(np.array([-2.0, -2.0]), np.array([-1.0, -1.0])))
    lo, hi = bounds.post[0]
    assert lo == pytest.approx([0.0, 0.0]) and hi == pytest.approx([0.0, 0.0])


def _random_net(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(2, 5))
    k = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(3, 8, k))
    n_exits = int(rng.integers(0, k + 1))
    positions = tuple(sorted(rng.choice(k, size=n_exits, replace=False).tolist()))
    thresholds = tuple(rng.uniform(0.6, 0.95, n_exits).tolist())
    return gen_synthetic(seed, SynthSpec(n, m, widths, positions, thresholds,
                                         weight_scale=float(rng.uniform(0.3, 1.2))))


@pytest.mark.parametrize("method", ["ibp", "affine"])
def test_propagation_soundness_sampled(method):
    """Sampled neuron values, exit logits and probabilities stay within bounds."""
    rng = np.random.default_rng(123)
    for seed in range(30):
        net = _random_net(seed)
        x = rng.uniform(-1.5, 1.5, net.input_dim)
        box = ball(x, float(rng.uniform(0.01, 0.6)))
        bounds = propagate(net, box, method=method)
        X = rng.uniform(box.lo, box.hi, size=(40, net.input_dim))
        per_exit, last = exit_logits_batch(net, X)
        tol = 1e-9
        llo, lhi = bounds.last_logits()
        scale = 1 + np.abs(last)
        assert np.all(last >= llo - tol * scale.max())
        assert np.all(last <= lhi + tol * scale.max())
        for e, logits in enumerate(per_exit):
            elo, ehi = bounds.exit_logits[e]
            assert np.all(logits >= elo - tol)
            assert np.all(logits <= ehi + tol)
            probs = softmax(logits)
            for c in range(net.num_classes):
                p = softmax_prob_bounds(elo, ehi, c)
                assert np.all(probs[:, c] >= p.lo - tol)
                assert np.all(probs[:, c] <= p.hi + tol)


def test_monotonicity_shrinking_box_never_widens():
    rng = np.random.default_rng(5)
    for seed in range(10):
        net = _random_net(seed + 100)
        x = rng.uniform(-1, 1, net.input_dim)
        outer = ball(x, 0.4)
        inner = ball(x, 0.1)
        bo = propagate(net, outer)
        bi = propagate(net, inner)
        for (olo, ohi), (ilo, ihi) in zip(bo.pre, bi.pre):
            assert np.all(ilo >= olo) and np.all(ihi <= ohi)
        for e in bo.exit_logits:
            olo, ohi = bo.exit_logits[e]
            ilo, ihi = bi.exit_logits[e]
            assert np.all(ilo >= olo) and np.all(ihi <= ohi)


def test_affine_is_at_least_as_tight_as_ibp():
    for seed in range(8):
        net = _random_net(seed + 300)
        box = ball(np.zeros(net.input_dim), 0.3)
        plain = propagate(net, box, method="ibp")
        tight = propagate(net, box, method="affine")
        lo_p, hi_p = plain.last_logits()
        lo_t, hi_t = tight.last_logits()
        assert np.all(lo_t >= lo_p - 1e-12)
        assert np.all(hi_t <= hi_p + 1e-12)


def test_post_relu_lower_bound_nonnegative():
    net = _random_net(17)
    bounds = propagate(net, ball(np.zeros(net.input_dim), 0.5))
    for lo, hi in bounds.post[:-1]:
        assert np.all(lo >= 0.0)
        assert np.all(hi >= lo)


def test_softmax_bounds_examples():
    lo = np.array([0.0, 0.0])
    hi = np.array([0.0, 0.0])
    p = softmax_prob_bounds(lo, hi, 0)
    assert p.lo == pytest.approx(0.5) and p.hi == pytest.approx(0.5)

    lo = np.array([2.0, 0.0])
    hi = np.array([2.0, 0.0])
    p = softmax_prob_bounds(lo, hi, 0)
    assert p.lo == pytest.approx(P_MARGIN_2, abs=1e-12)
    assert p.hi == pytest.approx(P_MARGIN_2, abs=1e-12)


def test_softmax_bounds_point_box_exact():
    rng = np.random.default_rng(2)
    for _ in range(50):
        logits = rng.normal(0, 3, size=int(rng.integers(2, 6)))
        exact = softmax(logits)
        for c in range(logits.shape[0]):
            p = softmax_prob_bounds(logits, logits, c)
            assert abs(p.lo - exact[c]) < 1e-12
            assert abs(p.hi - exact[c]) < 1e-12
            assert 0.0 <= p.lo <= p.hi <= 1.0


def test_softmax_bounds_sum_brackets_one():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = int(rng.integers(2, 6))
        lo = rng.normal(0, 2, m)
        hi = lo + rng.uniform(0, 2, m)
        los = [softmax_prob_bounds(lo, hi, c).lo for c in range(m)]
        his = [softmax_prob_bounds(lo, hi, c).hi for c in range(m)]
        assert sum(los) <= 1.0 + 1e-12
        assert sum(his) >= 1.0 - 1e-12


def test_softmax_bounds_stable_for_large_logits():
    lo = np.array([900.0, 880.0])
    hi = np.array([901.0, 881.0])
    p = softmax_prob_bounds(lo, hi, 0)
    assert 0.0 <= p.lo <= p.hi <= 1.0
    assert p.lo > 0.99


def test_propagate_depth_prefix(fixture_a):
    bounds = propagate(fixture_a, ball([3.0, 0.0], 0.1), depth=1)
    assert bounds.depth == 1
    assert 0 in bounds.exit_logits
    with pytest.raises(ValueError):
        bounds.last_logits()
