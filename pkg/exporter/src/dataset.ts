/**
 * A tiny in-repo digit dataset: 7x5 glyphs for 0-9, perturbed with seeded
 * pixel flips and jitter.  Enough signal for a small dense classifier to beat
 * chance comfortably while leaving some inputs genuinely ambiguous.
 */

import { Mulberry32 } from './rng';

const GLYPHS: string[][] = [
  ['01110', '10001', '10011', '10101', '11001', '10001', '01110'], // 0
  ['00100', '01100', '00100', '00100', '00100', '00100', '01110'], // 1
  ['01110', '10001', '00001', '00110', '01000', '10000', '11111'], // 2
  ['01110', '10001', '00001', '00110', '00001', '10001', '01110'], // 3
  ['00010', '00110', '01010', '10010', '11111', '00010', '00010'], // 4
  ['11111', '10000', '11110', '00001', '00001', '10001', '01110'], // 5
  ['00110', '01000', '10000', '11110', '10001', '10001', '01110'], // 6
  ['11111', '00001', '00010', '00100', '01000', '01000', '01000'], // 7
  ['01110', '10001', '10001', '01110', '10001', '10001', '01110'], // 8
  ['01110', '10001', '10001', '01111', '00001', '00010', '01100'], // 9
];

export const DIGIT_ROWS = 7;
export const DIGIT_COLS = 5;
export const INPUT_DIM = DIGIT_ROWS * DIGIT_COLS;
export const NUM_CLASSES = GLYPHS.length;

export interface DigitDataset {
  trainX: number[][];
  trainY: number[];
  testX: number[][];
  testY: number[];
}

function glyphPixels(digit: number): number[] {
  return GLYPHS[digit].flatMap((row) => [...row].map((ch) => (ch === '1' ? 1 : 0)));
}

function sample(digit: number, rng: Mulberry32, flipProb: number, jitter: number): number[] {
  return glyphPixels(digit).map((v) => {
    const flipped = rng.next() < flipProb ? 1 - v : v;
    const noisy = flipped + (rng.next() * 2 - 1) * jitter;
    return Math.min(1, Math.max(0, noisy));
  });
}

export function makeDigitDataset(
  seed: number,
  options: { train?: number; test?: number; flipProb?: number; jitter?: number } = {},
): DigitDataset {
  const train = options.train ?? 600;
  const test = options.test ?? 200;
  const flipProb = options.flipProb ?? 0.08;
  const jitter = options.jitter ?? 0.15;
  const rng = new Mulberry32(seed);
  const make = (count: number) => {
    const xs: number[][] = [];
    const ys: number[] = [];
    for (let i = 0; i < count; i++) {
      const digit = i % NUM_CLASSES;
      xs.push(sample(digit, rng, flipProb, jitter));
      ys.push(digit);
    }
    return { xs, ys };
  };
  const tr = make(train);
  const te = make(test);
  return { trainX: tr.xs, trainY: tr.ys, testX: te.xs, testY: te.ys };
}
