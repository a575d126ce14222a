import * as tf from '@tensorflow/tfjs';
import { describe, expect, it } from 'vitest';

import { Checkpoint, saveArtifacts } from '../src/checkpoint';
import { networkFromCheckpoint } from '../src/exporter';
import { forward } from '../src/interchange';
import { Mulberry32 } from '../src/rng';

async function checkpointFor(model: tf.LayersModel, exits: Checkpoint['exits'] = []) {
  return { backbone: await saveArtifacts(model), exits, meta: {} };
}

async function denseHead(inputDim: number, units: number, seed: number) {
  const head = tf.sequential({
    layers: [
      tf.layers.dense({
        units,
        inputShape: [inputDim],
        kernelInitializer: tf.initializers.glorotUniform({ seed }),
      }),
    ],
  });
  return saveArtifacts(head);
}

describe('checkpoint export', () => {
  it('exports a tiny dense net with probe agreement below 1e-5', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({
          units: 8,
          activation: 'relu',
          inputShape: [8],
          kernelInitializer: tf.initializers.glorotUniform({ seed: 1 }),
        }),
        tf.layers.dense({
          units: 3,
          kernelInitializer: tf.initializers.glorotUniform({ seed: 2 }),
        }),
      ],
    });
    const { network, manifest } = await networkFromCheckpoint(await checkpointFor(model));
    expect(network.layers.length).toBe(2);
    expect(network.input_dim).toBe(8);
    expect(network.num_classes).toBe(3);
    expect(network.layers[0].relu).toBe(true);
    expect(network.layers[1].relu).toBe(false);
    expect(manifest.probeAgreement).toBeLessThan(1e-5);
  });

  it('round-trips inference through the interchange evaluation', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({
          units: 6,
          activation: 'relu',
          inputShape: [4],
          kernelInitializer: tf.initializers.glorotUniform({ seed: 3 }),
        }),
        tf.layers.dense({
          units: 2,
          kernelInitializer: tf.initializers.glorotUniform({ seed: 4 }),
        }),
      ],
    });
    const { network } = await networkFromCheckpoint(await checkpointFor(model));
    const rng = new Mulberry32(9);
    for (let i = 0; i < 20; i++) {
      const x = Array.from({ length: 4 }, () => rng.next());
      const sourceOut = model.predict(tf.tensor2d([x])) as tf.Tensor;
      const expected = Array.from(sourceOut.dataSync());
      const ours = forward(network, x).lastLogits;
      ours.forEach((v, j) => expect(Math.abs(v - expected[j])).toBeLessThan(1e-5));
    }
  });

  it('attaches exit heads with the default threshold and maps their layer', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({ units: 5, activation: 'relu', inputShape: [3] }),
        tf.layers.dense({ units: 5, activation: 'relu' }),
        tf.layers.dense({ units: 2 }),
      ],
    });
    const exits = [
      { afterLayer: 0, threshold: undefined as unknown as number, head: await denseHead(5, 2, 7) },
      { afterLayer: 1, threshold: 0.8, head: await denseHead(5, 2, 8) },
    ];
    const { network, manifest } = await networkFromCheckpoint(await checkpointFor(model, exits));
    expect(network.exits.length).toBe(2);
    expect(network.exits[0].after_layer).toBe(0);
    expect(network.exits[0].threshold).toBe(0.9); // attached at export time
    expect(network.exits[1].after_layer).toBe(1);
    expect(network.exits[1].threshold).toBe(0.8);
    expect(manifest.exits[0].afterInterchangeLayer).toBe(0);
    expect(manifest.probeAgreement).toBeLessThan(1e-5);
  });

  it('supports threshold overrides per exit', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({ units: 4, activation: 'relu', inputShape: [3] }),
        tf.layers.dense({ units: 2 }),
      ],
    });
    const exits = [{ afterLayer: 0, threshold: 0.9, head: await denseHead(4, 2, 7) }];
    const { network } = await networkFromCheckpoint(await checkpointFor(model, exits), {
      thresholds: new Map([[0, 0.75]]),
    });
    expect(network.exits[0].threshold).toBe(0.75);
  });

  it('lowers conv backbones and records the lowering', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.conv2d({
          filters: 3,
          kernelSize: 3,
          activation: 'relu',
          inputShape: [6, 6, 1],
          kernelInitializer: tf.initializers.glorotUniform({ seed: 5 }),
        }),
        tf.layers.flatten(),
        tf.layers.dense({
          units: 2,
          kernelInitializer: tf.initializers.glorotUniform({ seed: 6 }),
        }),
      ],
    });
    const { network, manifest } = await networkFromCheckpoint(await checkpointFor(model));
    expect(network.layers.length).toBe(2);
    expect(network.input_dim).toBe(36);
    expect(manifest.lowering).toEqual([
      {
        sourceIndex: 0,
        inputShape: [6, 6, 1],
        kernelShape: [3, 3, 1, 3],
        denseShape: [4 * 4 * 3, 36],
      },
    ]);
    expect(manifest.probeAgreement).toBeLessThan(1e-5);
  });

  it('rejects pooling layers', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.conv2d({ filters: 2, kernelSize: 3, activation: 'relu', inputShape: [8, 8, 1] }),
        tf.layers.maxPooling2d({ poolSize: 2 }),
        tf.layers.flatten(),
        tf.layers.dense({ units: 2 }),
      ],
    });
    await expect(networkFromCheckpoint(await checkpointFor(model))).rejects.toThrow(
      /unsupported layer/,
    );
  });

  it('rejects hidden layers without ReLU', async () => {
    const model = tf.sequential({
      layers: [
        tf.layers.dense({ units: 4, inputShape: [3] }), // linear hidden layer
        tf.layers.dense({ units: 2 }),
      ],
    });
    await expect(networkFromCheckpoint(await checkpointFor(model))).rejects.toThrow(
      /unsupported activation/,
    );
  });
});
