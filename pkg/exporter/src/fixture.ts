/**
 * Trained end-to-end demo fixture: a small dense classifier on the bundled
 * digit set, with one confidence exit trained against the frozen backbone,
 * then exported to the interchange format.
 *
 * Determinism is at the metadata level: initializer seeds, data order and
 * epochs are fixed per seed, which pins the architecture, the training
 * schedule and the reported metrics' reproducibility, not bit-equal weights.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { Checkpoint, saveArtifacts, writeCheckpoint } from './checkpoint';
import { INPUT_DIM, NUM_CLASSES, makeDigitDataset } from './dataset';
import { DEFAULT_THRESHOLD, ExportManifest, exportCheckpoint } from './exporter';
import { InterchangeNetwork, inferExit } from './interchange';

export interface FixtureMeta {
  seed: number;
  threshold: number;
  testAccuracy: number;
  exitHeadAccuracy: number;
  exitDistribution: { early: number; last: number };
  epochs: { backbone: number; head: number };
}

export interface FixtureResult {
  checkpointPath: string;
  networkPath: string;
  manifest: ExportManifest;
  meta: FixtureMeta;
}

const softmaxLoss = (labels: tf.Tensor, logits: tf.Tensor) =>
  tf.losses.softmaxCrossEntropy(labels, logits);

function accuracy(logits: tf.Tensor2D, labels: number[]): number {
  const predicted = logits.argMax(1).arraySync() as number[];
  const hits = predicted.filter((p, i) => p === labels[i]).length;
  return hits / labels.length;
}

export async function makeFixture(
  outDir: string,
  seed: number,
  options: { threshold?: number; backboneEpochs?: number; headEpochs?: number } = {},
): Promise<FixtureResult> {
  const threshold = options.threshold ?? DEFAULT_THRESHOLD;
  const backboneEpochs = options.backboneEpochs ?? 60;
  const headEpochs = options.headEpochs ?? 40;
  fs.mkdirSync(outDir, { recursive: true });

  const data = makeDigitDataset(seed);
  const trainX = tf.tensor2d(data.trainX);
  const trainY = tf.oneHot(tf.tensor1d(data.trainY, 'int32'), NUM_CLASSES);
  const testX = tf.tensor2d(data.testX);

  const backbone = tf.sequential({
    layers: [
      tf.layers.dense({
        units: 16,
        activation: 'relu',
        inputShape: [INPUT_DIM],
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 1 }),
      }),
      tf.layers.dense({
        units: 16,
        activation: 'relu',
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 2 }),
      }),
      tf.layers.dense({
        units: NUM_CLASSES,
        kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 3 }),
      }),
    ],
  });
  backbone.compile({ optimizer: tf.train.adam(0.01), loss: softmaxLoss });
  const history = await backbone.fit(trainX, trainY, {
    epochs: backboneEpochs,
    batchSize: 32,
    shuffle: false,
    verbose: 0,
  });
  const finalLoss = history.history.loss[history.history.loss.length - 1] as number;
  if (!Number.isFinite(finalLoss)) {
    throw new Error(`backbone training diverged (loss=${finalLoss})`);
  }
  const testAccuracy = accuracy(backbone.predict(testX) as tf.Tensor2D, data.testY);

  // exit head on the first hidden layer, backbone frozen
  const firstLayer = backbone.layers[0];
  firstLayer.trainable = false;
  const input = tf.input({ shape: [INPUT_DIM] });
  const hidden = firstLayer.apply(input) as tf.SymbolicTensor;
  const headLayer = tf.layers.dense({
    units: NUM_CLASSES,
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 4 }),
  });
  const headModel = tf.model({ inputs: input, outputs: headLayer.apply(hidden) as tf.SymbolicTensor });
  headModel.compile({ optimizer: tf.train.adam(0.01), loss: softmaxLoss });
  const headHistory = await headModel.fit(trainX, trainY, {
    epochs: headEpochs,
    batchSize: 32,
    shuffle: false,
    verbose: 0,
  });
  const headLoss = headHistory.history.loss[headHistory.history.loss.length - 1] as number;
  if (!Number.isFinite(headLoss)) {
    throw new Error(`exit head training diverged (loss=${headLoss})`);
  }
  firstLayer.trainable = true;
  const exitHeadAccuracy = accuracy(headModel.predict(testX) as tf.Tensor2D, data.testY);

  // standalone single-dense head model for the checkpoint
  const standaloneHead = tf.sequential({
    layers: [tf.layers.dense({ units: NUM_CLASSES, inputShape: [16] })],
  });
  standaloneHead.layers[0].setWeights(headLayer.getWeights());

  const checkpoint: Checkpoint = {
    backbone: await saveArtifacts(backbone),
    exits: [{ afterLayer: 0, threshold, head: await saveArtifacts(standaloneHead) }],
    meta: { seed, dataset: 'bundled-digits-7x5', backboneEpochs, headEpochs },
  };
  const checkpointPath = path.join(outDir, 'checkpoint.json');
  writeCheckpoint(checkpointPath, checkpoint);

  const networkPath = path.join(outDir, 'network.json');
  const manifest = await exportCheckpoint(checkpointPath, networkPath);

  const network = JSON.parse(fs.readFileSync(networkPath, 'utf-8')) as InterchangeNetwork;
  let early = 0;
  for (const x of data.testX) {
    if (inferExit(network, x).exit !== 'last') early++;
  }
  const meta: FixtureMeta = {
    seed,
    threshold,
    testAccuracy,
    exitHeadAccuracy,
    exitDistribution: { early, last: data.testX.length - early },
    epochs: { backbone: backboneEpochs, head: headEpochs },
  };
  fs.writeFileSync(path.join(outDir, 'meta.json'), JSON.stringify(meta, null, 2));

  tf.dispose([trainX, trainY, testX]);
  return { checkpointPath, networkPath, manifest, meta };
}
