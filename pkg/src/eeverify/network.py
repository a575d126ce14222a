"""Early-exit ReLU networks: exact inference, traces, and the JSON interchange format.

A network is a chain of affine layers where every hidden layer is followed by a
ReLU and the final layer is not.  Confidence gates (exit heads) hang off hidden
layers: an exit head is an affine map to class scores, and inference stops at
the first head whose maximum SoftMax probability strictly exceeds its
threshold.  If no gate fires, the final layer's argmax decides.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

# Sentinel naming the final classifier in APIs that address "an exit or the end".
LAST = "last"

ExitId = Union[int, str]


class NetworkFormatError(ValueError):
    """Malformed network description or interchange file."""


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable SoftMax along the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _as_matrix(value, path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise NetworkFormatError(f"{path}: expected a non-empty 2-d matrix")
    if not np.all(np.isfinite(arr)):
        raise NetworkFormatError(f"{path}: entries must be finite")
    arr.setflags(write=False)
    return arr


def _as_vector(value, path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise NetworkFormatError(f"{path}: expected a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise NetworkFormatError(f"{path}: entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineLayer:
    """One affine map y = W x + b (weights are out_dim x in_dim, row-major)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_matrix(self.weights, "weights"))
        object.__setattr__(self, "bias", _as_vector(self.bias, "bias"))
        if self.bias.shape[0] != self.weights.shape[0]:
            raise NetworkFormatError(
                f"bias: length {self.bias.shape[0]} does not match out_dim {self.weights.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ x + self.bias


@dataclass(frozen=True, eq=False)
class ExitHead:
    """Confidence gate attached after a hidden layer.

    The head maps that layer's post-ReLU activations to class scores; the gate
    fires when the maximum SoftMax probability strictly exceeds ``threshold``.
    Thresholds at or below 0.5 are rejected: they would allow several classes
    to clear the gate at once.
    """

    after_layer: int
    weights: np.ndarray
    bias: np.ndarray
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_matrix(self.weights, "weights"))
        object.__setattr__(self, "bias", _as_vector(self.bias, "bias"))
        object.__setattr__(self, "threshold", float(self.threshold))
        if self.bias.shape[0] != self.weights.shape[0]:
            raise NetworkFormatError(
                f"bias: length {self.bias.shape[0]} does not match out_dim {self.weights.shape[0]}"
            )
        if not (self.after_layer >= 0 and int(self.after_layer) == self.after_layer):
            raise NetworkFormatError("after_layer: must be a non-negative integer")
        if not math.isfinite(self.threshold) or self.threshold <= 0.5:
            raise NetworkFormatError("threshold: threshold must exceed 0.5")
        if self.threshold > 1.0:
            raise NetworkFormatError("threshold: threshold must not exceed 1.0")

    def apply(self, hidden: np.ndarray) -> np.ndarray:
        return self.weights @ hidden + self.bias


@dataclass(frozen=True, eq=False)
class EENetwork:
    """Feed-forward ReLU classifier with zero or more early exits.

    Immutable after construction; all inference entry points are pure, so one
    instance can be shared freely across workers.
    """

    input_dim: int
    num_classes: int
    layers: tuple
    exits: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "exits", tuple(self.exits))
        if self.input_dim < 1 or self.num_classes < 2:
            raise NetworkFormatError("input_dim must be >= 1 and num_classes >= 2")
        if not self.layers:
            raise NetworkFormatError("layers: at least one layer is required")
        prev = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.in_dim != prev:
                raise NetworkFormatError(
                    f"layers[{i}].weights: in_dim {layer.in_dim} does not chain from previous width {prev}"
                )
            prev = layer.out_dim
        if self.layers[-1].out_dim != self.num_classes:
            raise NetworkFormatError(
                f"layers[{len(self.layers) - 1}]: last layer out_dim {self.layers[-1].out_dim} "
                f"must equal num_classes {self.num_classes}"
            )
        last_index = len(self.layers) - 1
        prev_pos = -1
        for j, head in enumerate(self.exits):
            if head.after_layer >= last_index:
                raise NetworkFormatError(f"exits[{j}].after_layer: exit must precede last layer")
            if head.after_layer <= prev_pos:
                raise NetworkFormatError(f"exits[{j}].after_layer: exits must be strictly ascending")
            prev_pos = head.after_layer
            width = self.layers[head.after_layer].out_dim
            if head.weights.shape[1] != width:
                raise NetworkFormatError(
                    f"exits[{j}].weights: expected in_dim {width} at layer {head.after_layer}, "
                    f"got {head.weights.shape[1]}"
                )
            if head.weights.shape[0] != self.num_classes:
                raise NetworkFormatError(
                    f"exits[{j}].weights: head out_dim {head.weights.shape[0]} must equal "
                    f"num_classes {self.num_classes}"
                )

    @property
    def num_exits(self) -> int:
        return len(self.exits)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def max_width(self) -> int:
        """Widest layer, reported as a problem-size statistic."""
        return max(layer.out_dim for layer in self.layers)

    def exit_ids(self) -> list:
        """Exit ordinals followed by LAST, in verification order."""
        return list(range(self.num_exits)) + [LAST]

    def check_exit_id(self, at: ExitId) -> ExitId:
        if at == LAST:
            return at
        if isinstance(at, (int, np.integer)) and 0 <= at < self.num_exits:
            return int(at)
        raise ValueError(f"invalid exit identifier: {at!r}")


@dataclass(frozen=True)
class Trace:
    """The backbone prefix an input propagates through before its output is produced."""

    layers: tuple
    exit_index: ExitId


@dataclass(frozen=True)
class InferenceResult:
    exit_index: ExitId
    logits: np.ndarray
    probs: np.ndarray
    predicted_class: int


def _check_input(net: EENetwork, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (net.input_dim,):
        raise ValueError(f"input has shape {arr.shape}, expected ({net.input_dim},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input must be finite")
    return arr


def infer(net: EENetwork, x) -> InferenceResult:
    """Run early-exit inference: stop at the first gate whose max probability
    strictly exceeds its threshold, else classify at the final layer.

    Final-layer argmax ties resolve to the lowest class index.
    """
    h = _check_input(net, x)
    next_exit = 0
    for i, layer in enumerate(net.layers[:-1]):
        h = np.maximum(layer.apply(h), 0.0)
        while next_exit < net.num_exits and net.exits[next_exit].after_layer == i:
            head = net.exits[next_exit]
            logits = head.apply(h)
            probs = softmax(logits)
            if np.max(probs) > head.threshold:
                return InferenceResult(next_exit, logits, probs, int(np.argmax(probs)))
            next_exit += 1
    logits = net.layers[-1].apply(h)
    probs = softmax(logits)
    return InferenceResult(LAST, logits, probs, int(np.argmax(logits)))


def forward_logits(net: EENetwork, x, at: ExitId) -> np.ndarray:
    """Logits at the designated exit head (or the final layer), ignoring all gating."""
    at = net.check_exit_id(at)
    h = _check_input(net, x)
    if at == LAST:
        for layer in net.layers[:-1]:
            h = np.maximum(layer.apply(h), 0.0)
        return net.layers[-1].apply(h)
    for layer in net.layers[:net.exits[at].after_layer + 1]:
        h = np.maximum(layer.apply(h), 0.0)
    return net.exits[at].apply(h)


def trace(net: EENetwork, x) -> Trace:
    """Layers traversed by x: the backbone prefix ending at the firing exit, or all of it."""
    result = infer(net, x)
    if result.exit_index == LAST:
        return Trace(tuple(range(net.num_layers)), LAST)
    prefix = net.exits[result.exit_index].after_layer + 1
    return Trace(tuple(range(prefix)), result.exit_index)


def exit_logits_batch(net: EENetwork, X: np.ndarray):
    """Logits at every exit head plus the final layer for a batch, gating ignored.

    Returns (list of (N, m) arrays, one per exit, in exit order; (N, m) last-layer logits).
    """
    H = np.asarray(X, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != net.input_dim:
        raise ValueError(f"batch has shape {H.shape}, expected (N, {net.input_dim})")
    per_exit = []
    next_exit = 0
    for i, layer in enumerate(net.layers[:-1]):
        H = np.maximum(H @ layer.weights.T + layer.bias, 0.0)
        while next_exit < net.num_exits and net.exits[next_exit].after_layer == i:
            head = net.exits[next_exit]
            per_exit.append(H @ head.weights.T + head.bias)
            next_exit += 1
    last = H @ net.layers[-1].weights.T + net.layers[-1].bias
    return per_exit, last


def infer_batch(net: EENetwork, X: np.ndarray):
    """Vectorized early-exit inference.

    Returns (exit_pos, classes): exit_pos[i] is the firing exit ordinal, or
    num_exits when row i reaches the final layer; classes[i] is the prediction.
    """
    per_exit, last = exit_logits_batch(net, X)
    n = last.shape[0]
    exit_pos = np.full(n, net.num_exits, dtype=np.int64)
    classes = np.argmax(last, axis=1)
    open_rows = np.ones(n, dtype=bool)
    for e, logits in enumerate(per_exit):
        probs = softmax(logits)
        fired = open_rows & (np.max(probs, axis=1) > net.exits[e].threshold)
        exit_pos[fired] = e
        classes[fired] = np.argmax(probs[fired], axis=1)
        open_rows &= ~fired
    return exit_pos, classes


# ---------------------------------------------------------------------------
# Interchange format
# ---------------------------------------------------------------------------

def network_to_dict(net: EENetwork) -> dict:
    last = net.num_layers - 1
    return {
        "input_dim": net.input_dim,
        "num_classes": net.num_classes,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "relu": i < last,
            }
            for i, layer in enumerate(net.layers)
        ],
        "exits": [
            {
                "after_layer": head.after_layer,
                "weights": head.weights.tolist(),
                "bias": head.bias.tolist(),
                "threshold": head.threshold,
            }
            for head in net.exits
        ],
    }


def save_network(net: EENetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh)
        fh.write("\n")


def _require(mapping: dict, key: str, path: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise NetworkFormatError(f"{path}.{key}: missing field")
    return mapping[key]


def network_from_dict(data: dict) -> EENetwork:
    if not isinstance(data, dict):
        raise NetworkFormatError("root: expected a JSON object")
    input_dim = _require(data, "input_dim", "root")
    num_classes = _require(data, "num_classes", "root")
    raw_layers = _require(data, "layers", "root")
    raw_exits = data.get("exits", [])
    if not isinstance(raw_layers, list) or not raw_layers:
        raise NetworkFormatError("layers: expected a non-empty list")
    if not isinstance(raw_exits, list):
        raise NetworkFormatError("exits: expected a list")

    layers = []
    for i, item in enumerate(raw_layers):
        try:
            layer = AffineLayer(_require(item, "weights", f"layers[{i}]"),
                                _require(item, "bias", f"layers[{i}]"))
        except NetworkFormatError as err:
            raise NetworkFormatError(f"layers[{i}].{err}") from None
        relu = _require(item, "relu", f"layers[{i}]")
        expect_relu = i < len(raw_layers) - 1
        if bool(relu) != expect_relu:
            wanted = "true on hidden layers" if expect_relu else "false on the last layer"
            raise NetworkFormatError(f"layers[{i}].relu: must be {wanted}")
        layers.append(layer)

    exits = []
    for j, item in enumerate(raw_exits):
        try:
            exits.append(
                ExitHead(
                    _require(item, "after_layer", f"exits[{j}]"),
                    _require(item, "weights", f"exits[{j}]"),
                    _require(item, "bias", f"exits[{j}]"),
                    _require(item, "threshold", f"exits[{j}]"),
                )
            )
        except NetworkFormatError as err:
            raise NetworkFormatError(f"exits[{j}].{err}") from None

    return EENetwork(int(input_dim), int(num_classes), tuple(layers), tuple(exits))


def load_network(path) -> EENetwork:
    if not os.path.exists(path):
        raise NetworkFormatError(f"network file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise NetworkFormatError(f"invalid JSON in {path}: {err}") from None
    return network_from_dict(data)


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic network: hidden widths, exit placement, thresholds."""

    input_dim: int
    num_classes: int
    hidden_widths: Sequence[int]
    exit_positions: Sequence[int] = ()
    exit_thresholds: Sequence[float] = ()
    weight_scale: float = None  # default: 1/sqrt(fan_in) per layer

    def __post_init__(self):
        if len(self.exit_positions) != len(self.exit_thresholds):
            raise NetworkFormatError("exit_positions and exit_thresholds must have equal length")


def gen_synthetic(seed: int, spec: SynthSpec) -> EENetwork:
    """Deterministic random network: same seed and spec give a bit-identical net.

    Weights and biases are uniform on [-s, s] with s = weight_scale, defaulting
    to 1/sqrt(fan_in) per layer to keep logits in a benign range.
    """
    rng = np.random.default_rng(seed)

    def scale(fan_in: int) -> float:
        return spec.weight_scale if spec.weight_scale is not None else 1.0 / math.sqrt(fan_in)

    dims = [spec.input_dim] + list(spec.hidden_widths) + [spec.num_classes]
    layers = []
    for i in range(len(dims) - 1):
        s = scale(dims[i])
        layers.append(AffineLayer(rng.uniform(-s, s, size=(dims[i + 1], dims[i])),
                                  rng.uniform(-s, s, size=dims[i + 1])))
    exits = []
    for pos, thr in zip(spec.exit_positions, spec.exit_thresholds):
        width = dims[pos + 1]
        s = scale(width)
        exits.append(ExitHead(pos,
                              rng.uniform(-s, s, size=(spec.num_classes, width)),
                              rng.uniform(-s, s, size=spec.num_classes),
                              thr))
    return EENetwork(spec.input_dim, spec.num_classes, tuple(layers), tuple(exits))
