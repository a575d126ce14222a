/**
 * Lowering of 2-d convolutions to dense affine layers.
 *
 * Inputs and outputs use NHWC order flattened row-major, so a lowered layer
 * composes directly with flatten/dense layers in the interchange chain.  The
 * construction scatters each kernel tap into a (sparse-in-structure, densely
 * stored) matrix; it is exact, not an approximation.
 */

export type Padding = 'valid' | 'same';

export interface ConvSpec {
  /** kernel[ky][kx][inChannel][outChannel], as tfjs stores Conv2D kernels */
  kernel: number[][][][];
  bias: number[];
  strides: [number, number];
  padding: Padding;
  /** input spatial shape [height, width, channels] */
  inputShape: [number, number, number];
}

export interface LoweredConv {
  weights: number[][]; // (outH*outW*outC) x (inH*inW*inC)
  bias: number[];
  outputShape: [number, number, number];
}

export const MAX_DENSE_ENTRIES = 1_000_000;

function outSize(input: number, kernel: number, stride: number, padding: Padding): number {
  if (padding === 'same') return Math.ceil(input / stride);
  return Math.floor((input - kernel) / stride) + 1;
}

function padBefore(input: number, kernel: number, stride: number, padding: Padding): number {
  if (padding === 'valid') return 0;
  const out = Math.ceil(input / stride);
  const total = Math.max((out - 1) * stride + kernel - input, 0);
  return Math.floor(total / 2);
}

export function lowerConvToDense(spec: ConvSpec): LoweredConv {
  const [inH, inW, inC] = spec.inputShape;
  const kH = spec.kernel.length;
  const kW = spec.kernel[0].length;
  const outC = spec.bias.length;
  const [sH, sW] = spec.strides;
  const outH = outSize(inH, kH, sH, spec.padding);
  const outW = outSize(inW, kW, sW, spec.padding);
  if (outH < 1 || outW < 1) throw new Error('convolution output is empty');

  const rows = outH * outW * outC;
  const cols = inH * inW * inC;
  if (rows * cols > MAX_DENSE_ENTRIES) {
    throw new Error(
      `lowered convolution needs ${rows}x${cols} entries, above the ${MAX_DENSE_ENTRIES} cap`,
    );
  }

  const pH = padBefore(inH, kH, sH, spec.padding);
  const pW = padBefore(inW, kW, sW, spec.padding);

  const weights: number[][] = Array.from({ length: rows }, () => new Array<number>(cols).fill(0));
  const bias = new Array<number>(rows).fill(0);

  for (let oy = 0; oy < outH; oy++) {
    for (let ox = 0; ox < outW; ox++) {
      for (let oc = 0; oc < outC; oc++) {
        const row = (oy * outW + ox) * outC + oc;
        bias[row] = spec.bias[oc];
        for (let ky = 0; ky < kH; ky++) {
          const iy = oy * sH + ky - pH;
          if (iy < 0 || iy >= inH) continue; // zero padding
          for (let kx = 0; kx < kW; kx++) {
            const ix = ox * sW + kx - pW;
            if (ix < 0 || ix >= inW) continue;
            for (let ic = 0; ic < inC; ic++) {
              weights[row][(iy * inW + ix) * inC + ic] = spec.kernel[ky][kx][ic][oc];
            }
          }
        }
      }
    }
  }
  return { weights, bias, outputShape: [outH, outW, outC] };
}
