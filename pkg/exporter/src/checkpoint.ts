/**
 * On-disk checkpoint format: a backbone model plus trained exit heads, all
 * stored as tfjs model artifacts (topology + weight manifest + base64 weight
 * data) in one JSON file.
 */

import * as fs from 'fs';
import * as tf from '@tensorflow/tfjs';

export interface SavedArtifacts {
  modelTopology: unknown;
  weightSpecs: tf.io.WeightsManifestEntry[];
  weightDataBase64: string;
}

export interface ExitCheckpoint {
  /** index into the backbone's layer list (input layers excluded) */
  afterLayer: number;
  threshold: number;
  head: SavedArtifacts;
}

export interface Checkpoint {
  backbone: SavedArtifacts;
  exits: ExitCheckpoint[];
  meta: Record<string, unknown>;
}

export async function saveArtifacts(model: tf.LayersModel): Promise<SavedArtifacts> {
  let captured: tf.io.ModelArtifacts | null = null;
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      captured = artifacts;
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
    }),
  );
  if (!captured) throw new Error('model save produced no artifacts');
  const { modelTopology, weightSpecs, weightData } = captured as tf.io.ModelArtifacts;
  const buffer = Buffer.from(new Uint8Array(weightData as ArrayBuffer));
  return {
    modelTopology,
    weightSpecs: weightSpecs as tf.io.WeightsManifestEntry[],
    weightDataBase64: buffer.toString('base64'),
  };
}

export async function loadArtifacts(saved: SavedArtifacts): Promise<tf.LayersModel> {
  const raw = Buffer.from(saved.weightDataBase64, 'base64');
  const weightData = raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength);
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: saved.modelTopology as object,
      weightSpecs: saved.weightSpecs,
      weightData,
    }),
  );
}

export function writeCheckpoint(path: string, checkpoint: Checkpoint): void {
  fs.writeFileSync(path, JSON.stringify(checkpoint));
}

export function readCheckpoint(path: string): Checkpoint {
  if (!fs.existsSync(path)) throw new Error(`checkpoint not found: ${path}`);
  return JSON.parse(fs.readFileSync(path, 'utf-8')) as Checkpoint;
}
