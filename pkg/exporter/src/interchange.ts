/**
 * The verifier's network interchange format, plus a float64 reference
 * evaluator used for probe-agreement checks.
 *
 * A network is a chain of affine layers where every hidden layer is followed
 * by a ReLU and the last one is not; exit heads hang off hidden layers and
 * fire when their maximum SoftMax probability strictly exceeds the threshold.
 */

export interface InterchangeLayer {
  weights: number[][]; // out_dim x in_dim, row-major
  bias: number[];
  relu: boolean;
}

export interface InterchangeExit {
  after_layer: number;
  weights: number[][]; // num_classes x layer width
  bias: number[];
  threshold: number;
}

export interface InterchangeNetwork {
  input_dim: number;
  num_classes: number;
  layers: InterchangeLayer[];
  exits: InterchangeExit[];
}

export function validateNetwork(net: InterchangeNetwork): void {
  if (net.layers.length === 0) throw new Error('network has no layers');
  let width = net.input_dim;
  net.layers.forEach((layer, i) => {
    if (layer.weights.some((row) => row.length !== width)) {
      throw new Error(`layers[${i}]: expected in_dim ${width}`);
    }
    if (layer.bias.length !== layer.weights.length) {
      throw new Error(`layers[${i}]: bias length mismatch`);
    }
    const hidden = i < net.layers.length - 1;
    if (layer.relu !== hidden) {
      throw new Error(`layers[${i}]: relu must be ${hidden} here`);
    }
    width = layer.weights.length;
  });
  if (width !== net.num_classes) {
    throw new Error('last layer width must equal num_classes');
  }
  let prev = -1;
  net.exits.forEach((exit, j) => {
    if (exit.after_layer <= prev) throw new Error(`exits[${j}]: not strictly ascending`);
    if (exit.after_layer >= net.layers.length - 1) {
      throw new Error(`exits[${j}]: exit must precede last layer`);
    }
    if (!(exit.threshold > 0.5 && exit.threshold <= 1.0)) {
      throw new Error(`exits[${j}]: threshold must be in (0.5, 1.0]`);
    }
    const hereWidth = net.layers[exit.after_layer].weights.length;
    if (exit.weights.some((row) => row.length !== hereWidth)) {
      throw new Error(`exits[${j}]: head expects in_dim ${hereWidth}`);
    }
    if (exit.weights.length !== net.num_classes) {
      throw new Error(`exits[${j}]: head out_dim must equal num_classes`);
    }
    prev = exit.after_layer;
  });
}

function affine(weights: number[][], bias: number[], x: number[]): number[] {
  return weights.map((row, i) => {
    let acc = bias[i];
    for (let j = 0; j < row.length; j++) acc += row[j] * x[j];
    return acc;
  });
}

export function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const total = exps.reduce((a, b) => a + b, 0);
  return exps.map((v) => v / total);
}

export interface ForwardResult {
  exitLogits: number[][]; // one vector per exit head, gating ignored
  lastLogits: number[];
}

/** Full forward pass in float64, gates ignored. */
export function forward(net: InterchangeNetwork, x: number[]): ForwardResult {
  let h = x;
  const exitLogits: number[][] = [];
  let nextExit = 0;
  for (let i = 0; i < net.layers.length; i++) {
    const layer = net.layers[i];
    h = affine(layer.weights, layer.bias, h);
    if (layer.relu) h = h.map((v) => Math.max(v, 0));
    while (nextExit < net.exits.length && net.exits[nextExit].after_layer === i) {
      const head = net.exits[nextExit];
      exitLogits.push(affine(head.weights, head.bias, h));
      nextExit++;
    }
  }
  return { exitLogits, lastLogits: h };
}

export interface InferenceOutcome {
  exit: number | 'last';
  cls: number;
}

/** Early-exit inference: first gate whose max probability strictly exceeds
 * its threshold wins; otherwise the final layer's argmax. */
export function inferExit(net: InterchangeNetwork, x: number[]): InferenceOutcome {
  const { exitLogits, lastLogits } = forward(net, x);
  for (let e = 0; e < net.exits.length; e++) {
    const probs = softmax(exitLogits[e]);
    const best = probs.indexOf(Math.max(...probs));
    if (probs[best] > net.exits[e].threshold) return { exit: e, cls: best };
  }
  return { exit: 'last', cls: lastLogits.indexOf(Math.max(...lastLogits)) };
}
