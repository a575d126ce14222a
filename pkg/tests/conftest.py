import numpy as np
import pytest

from eeverify import AffineLayer, EENetwork, ExitHead


def build_fixture_a() -> EENetwork:
    """2-d two-class net: identity+ReLU hidden layer with an identity exit head
    (threshold 0.9) hanging off it, identity final layer.  Final logits are
    ReLU(x), exit-head logits equal the hidden activations."""
    eye = np.eye(2)
    zero = np.zeros(2)
    return EENetwork(
        input_dim=2,
        num_classes=2,
        layers=(AffineLayer(eye, zero), AffineLayer(eye, zero)),
        exits=(ExitHead(0, eye, zero, 0.9),),
    )


@pytest.fixture
def fixture_a() -> EENetwork:
    return build_fixture_a()


@pytest.fixture
def fixture_a_path(tmp_path):
    from eeverify import save_network

    path = tmp_path / "fixture_a.json"
    save_network(build_fixture_a(), path)
    return path
