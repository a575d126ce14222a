/**
 * Conversion of a trained checkpoint (backbone + exit heads) into the
 * verifier's interchange JSON.
 *
 * Supported backbone layers: Dense, Conv2D (lowered to dense), Flatten, and
 * standalone ReLU; hidden affine layers must end up ReLU-activated and the
 * final one linear, since that is the only shape the interchange admits.
 * Every export is probe-checked: the interchange evaluation must match the
 * source model's logits (backbone and every head) within a tolerance on a
 * batch of random inputs, otherwise the export fails.
 */

import * as fs from 'fs';
import * as tf from '@tensorflow/tfjs';

import { Checkpoint, loadArtifacts, readCheckpoint } from './checkpoint';
import { InterchangeExit, InterchangeLayer, InterchangeNetwork, forward, validateNetwork } from './interchange';
import { LoweredConv, Padding, lowerConvToDense } from './lower';
import { Mulberry32 } from './rng';

export const DEFAULT_THRESHOLD = 0.9;
export const PROBE_TOLERANCE = 1e-5;

export interface LayerMapping {
  sourceIndex: number;
  className: string;
  /** index of the interchange affine layer this source layer became (or
   * contributed to, for flatten/relu layers) */
  interchangeIndex: number | null;
}

export interface LoweringReport {
  sourceIndex: number;
  inputShape: [number, number, number];
  kernelShape: [number, number, number, number];
  denseShape: [number, number];
}

export interface ExportedExit {
  afterSourceLayer: number;
  afterInterchangeLayer: number;
  threshold: number;
}

export interface ExportManifest {
  sourceCheckpoint: string;
  layerMapping: LayerMapping[];
  exits: ExportedExit[];
  lowering: LoweringReport[];
  probes: number;
  probeAgreement: number;
}

export interface ExportOptions {
  /** per-exit threshold overrides, keyed by exit position */
  thresholds?: Map<number, number>;
  probes?: number;
  seed?: number;
}

interface PendingAffine {
  weights: number[][];
  bias: number[];
  relu: boolean;
}

function realLayers(model: tf.LayersModel): tf.layers.Layer[] {
  return model.layers.filter((l) => l.getClassName() !== 'InputLayer');
}

function activationOf(layer: tf.layers.Layer): string {
  const config = layer.getConfig() as { activation?: string | { identifier?: string } };
  const activation = config.activation;
  if (typeof activation === 'string') return activation;
  if (activation && typeof activation === 'object' && activation.identifier) {
    return activation.identifier;
  }
  return 'linear';
}

function transpose(matrix: number[][]): number[][] {
  return matrix[0].map((_, j) => matrix.map((row) => row[j]));
}

export interface ConvertedBackbone {
  layers: InterchangeLayer[];
  mapping: LayerMapping[];
  lowering: LoweringReport[];
  /** interchange affine index reached at each source layer */
  affineIndexAt: number[];
  inputDim: number;
}

export function convertBackbone(model: tf.LayersModel): ConvertedBackbone {
  const layers = realLayers(model);
  const inputShapeRaw = (model.inputs[0].shape as Array<number | null>).slice(1);
  if (inputShapeRaw.some((d) => d === null)) {
    throw new Error('source model needs a fully fixed input shape');
  }
  let shape = inputShapeRaw as number[];
  const inputDim = shape.reduce((a, b) => a * b, 1);

  const affines: PendingAffine[] = [];
  const mapping: LayerMapping[] = [];
  const lowering: LoweringReport[] = [];
  const affineIndexAt: number[] = [];

  layers.forEach((layer, idx) => {
    const cls = layer.getClassName();
    if (cls === 'Dense') {
      const [kernel, bias] = layer.getWeights();
      const activation = activationOf(layer);
      if (activation !== 'relu' && activation !== 'linear') {
        throw new Error(`unsupported activation on layer ${idx}: ${activation}`);
      }
      affines.push({
        weights: transpose(kernel.arraySync() as number[][]),
        bias: bias.arraySync() as number[],
        relu: activation === 'relu',
      });
      shape = [affines[affines.length - 1].weights.length];
      mapping.push({ sourceIndex: idx, className: cls, interchangeIndex: affines.length - 1 });
    } else if (cls === 'Conv2D') {
      if (shape.length !== 3) {
        throw new Error(`unsupported layer type: Conv2D on non-spatial input at layer ${idx}`);
      }
      const [kernel, bias] = layer.getWeights();
      const config = layer.getConfig() as {
        strides: number[] | number;
        padding: Padding;
      };
      const activation = activationOf(layer);
      if (activation !== 'relu' && activation !== 'linear') {
        throw new Error(`unsupported activation on layer ${idx}: ${activation}`);
      }
      const strides = Array.isArray(config.strides)
        ? (config.strides as number[])
        : [config.strides as number, config.strides as number];
      const spec = {
        kernel: kernel.arraySync() as number[][][][],
        bias: bias.arraySync() as number[],
        strides: [strides[0], strides[1]] as [number, number],
        padding: config.padding,
        inputShape: shape as [number, number, number],
      };
      const lowered: LoweredConv = lowerConvToDense(spec);
      lowering.push({
        sourceIndex: idx,
        inputShape: spec.inputShape,
        kernelShape: [
          spec.kernel.length,
          spec.kernel[0].length,
          spec.kernel[0][0].length,
          spec.bias.length,
        ],
        denseShape: [lowered.weights.length, lowered.weights[0].length],
      });
      affines.push({ weights: lowered.weights, bias: lowered.bias, relu: activation === 'relu' });
      shape = lowered.outputShape;
      mapping.push({ sourceIndex: idx, className: cls, interchangeIndex: affines.length - 1 });
    } else if (cls === 'Flatten') {
      shape = [shape.reduce((a, b) => a * b, 1)];
      mapping.push({
        sourceIndex: idx,
        className: cls,
        interchangeIndex: affines.length ? affines.length - 1 : null,
      });
    } else if (cls === 'ReLU' || (cls === 'Activation' && activationOf(layer) === 'relu')) {
      const prev = affines[affines.length - 1];
      if (!prev || prev.relu) {
        throw new Error(`unsupported layer type: dangling activation at layer ${idx}`);
      }
      prev.relu = true;
      mapping.push({ sourceIndex: idx, className: cls, interchangeIndex: affines.length - 1 });
    } else {
      throw new Error(`unsupported layer type: ${cls}`);
    }
    affineIndexAt.push(affines.length - 1);
  });

  if (affines.length === 0) throw new Error('source model has no affine layers');
  affines.slice(0, -1).forEach((a, i) => {
    if (!a.relu) throw new Error(`unsupported activation: hidden layer ${i} is not ReLU`);
  });
  if (affines[affines.length - 1].relu) {
    throw new Error('unsupported activation: the final layer must be linear');
  }

  return { layers: affines, mapping, lowering, affineIndexAt, inputDim };
}

async function headParameters(saved: Checkpoint['exits'][number]) {
  const head = await loadArtifacts(saved.head);
  const dense = realLayers(head);
  if (dense.length !== 1 || dense[0].getClassName() !== 'Dense') {
    throw new Error('exit heads must be single dense layers');
  }
  if (activationOf(dense[0]) !== 'linear') {
    throw new Error('exit heads must be linear (SoftMax is applied by the verifier)');
  }
  const [kernel, bias] = dense[0].getWeights();
  return {
    weights: transpose(kernel.arraySync() as number[][]),
    bias: bias.arraySync() as number[],
  };
}

/** Source-side logits for the probes: backbone output plus each head's
 * output on its (flattened) attachment activation, all in float32. */
function sourceLogits(
  backbone: tf.LayersModel,
  exits: InterchangeExit[],
  attachLayers: tf.layers.Layer[],
  probes: tf.Tensor2D,
): { last: number[][]; heads: number[][][] } {
  return tf.tidy(() => {
    const outputs = [
      backbone.outputs[0],
      ...attachLayers.map((l) => l.output as tf.SymbolicTensor),
    ];
    const probeModel = tf.model({ inputs: backbone.inputs, outputs });
    const predicted = probeModel.predict(probes);
    const results = Array.isArray(predicted) ? predicted : [predicted];
    const last = results[0].arraySync() as number[][];
    const heads = exits.map((exit, e) => {
      const act = results[e + 1].reshape([probes.shape[0], -1]) as tf.Tensor2D;
      const kernel = tf.tensor2d(exit.weights).transpose() as tf.Tensor2D;
      const logits = act.matMul(kernel).add(tf.tensor1d(exit.bias));
      return logits.arraySync() as number[][];
    });
    return { last, heads };
  });
}

export async function networkFromCheckpoint(
  checkpoint: Checkpoint,
  options: ExportOptions = {},
): Promise<{ network: InterchangeNetwork; manifest: Omit<ExportManifest, 'sourceCheckpoint'> }> {
  const backbone = await loadArtifacts(checkpoint.backbone);
  const converted = convertBackbone(backbone);

  const layers = realLayers(backbone);
  const exits: InterchangeExit[] = [];
  const exitReports: ExportedExit[] = [];
  const attachLayers: tf.layers.Layer[] = [];
  const sorted = [...checkpoint.exits].sort((a, b) => a.afterLayer - b.afterLayer);
  for (let e = 0; e < sorted.length; e++) {
    const saved = sorted[e];
    if (saved.afterLayer < 0 || saved.afterLayer >= layers.length) {
      throw new Error(`exit ${e}: afterLayer ${saved.afterLayer} out of range`);
    }
    const afterInterchange = converted.affineIndexAt[saved.afterLayer];
    const threshold = options.thresholds?.get(e) ?? saved.threshold ?? DEFAULT_THRESHOLD;
    const params = await headParameters(saved);
    exits.push({
      after_layer: afterInterchange,
      weights: params.weights,
      bias: params.bias,
      threshold,
    });
    exitReports.push({
      afterSourceLayer: saved.afterLayer,
      afterInterchangeLayer: afterInterchange,
      threshold,
    });
    attachLayers.push(layers[saved.afterLayer]);
  }

  const network: InterchangeNetwork = {
    input_dim: converted.inputDim,
    num_classes: converted.layers[converted.layers.length - 1].weights.length,
    layers: converted.layers,
    exits,
  };
  validateNetwork(network);

  // probe agreement between the source model and the interchange evaluation
  const nProbes = options.probes ?? 100;
  const rng = new Mulberry32(options.seed ?? 1);
  const probeData: number[][] = Array.from({ length: nProbes }, () =>
    Array.from({ length: converted.inputDim }, () => rng.next()),
  );
  const inputShape = (backbone.inputs[0].shape as number[]).slice(1);
  const probes = tf.tensor2d(probeData).reshape([nProbes, ...inputShape]) as tf.Tensor2D;
  const source = sourceLogits(backbone, exits, attachLayers, probes);
  probes.dispose();

  let worst = 0;
  probeData.forEach((x, i) => {
    const ours = forward(network, x);
    ours.lastLogits.forEach((v, j) => {
      worst = Math.max(worst, Math.abs(v - source.last[i][j]));
    });
    ours.exitLogits.forEach((logits, e) => {
      logits.forEach((v, j) => {
        worst = Math.max(worst, Math.abs(v - source.heads[e][i][j]));
      });
    });
  });
  if (worst > PROBE_TOLERANCE) {
    throw new Error(
      `agreement failure: max |logit diff| ${worst} exceeds ${PROBE_TOLERANCE} on ${nProbes} probes`,
    );
  }

  return {
    network,
    manifest: {
      layerMapping: converted.mapping,
      exits: exitReports,
      lowering: converted.lowering,
      probes: nProbes,
      probeAgreement: worst,
    },
  };
}

export async function exportCheckpoint(
  ckptPath: string,
  outPath: string,
  options: ExportOptions = {},
): Promise<ExportManifest> {
  const checkpoint = readCheckpoint(ckptPath);
  const { network, manifest } = await networkFromCheckpoint(checkpoint, options);
  fs.writeFileSync(outPath, JSON.stringify(network));
  const full: ExportManifest = { sourceCheckpoint: ckptPath, ...manifest };
  fs.writeFileSync(`${outPath}.manifest.json`, JSON.stringify(full, null, 2));
  return full;
}
