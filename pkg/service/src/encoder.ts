/**
 * Differentiable dual encoder backing the service.
 *
 * Images: average-pool to a 16x16x3 grid, flatten to 768 features, apply
 * a fixed 512x768 projection, L2-normalize. Text: a unit 512-vector
 * seeded from a stable hash of the string. The image path has a
 * hand-derived backward (pooling and projection are linear; the
 * normalization Jacobian is closed-form), so the service can return
 * exact loss gradients with respect to the input pixels.
 *
 * The projection weights come from the seeded PRNG by default, or from a
 * raw little-endian float32 file (512*768 values) when a pretrained
 * export is available; the active source is reported in the model id.
 */

import { readFileSync } from 'node:fs';
import { SplitMix64, seedFromParts } from './prng';

export const EMBED_DIM = 512;
export const POOL = 16;
const FEATURES = POOL * POOL * 3;

export class EncoderError extends Error {}

export interface ImageBatch {
  values: Float32Array; // [d, h, w, 3] row-major
  d: number;
  h: number;
  w: number;
}

export function batchFromShape(values: Float32Array, shape: number[]): ImageBatch {
  if (shape.length !== 4 || shape[3] !== 3) {
    throw new EncoderError(`batch must be [D, H, W, 3], got ${JSON.stringify(shape)}`);
  }
  const [d, h, w] = shape;
  if (h % POOL !== 0 || w % POOL !== 0) {
    throw new EncoderError(`image sides must be divisible by ${POOL}, got ${h}x${w}`);
  }
  for (let i = 0; i < values.length; i++) {
    const v = values[i];
    if (!(v >= -1e-6 && v <= 1 + 1e-6)) {
      throw new EncoderError(`batch values must lie in [0, 1]; found ${v}`);
    }
  }
  return { values, d, h, w };
}

export class DualEncoder {
  readonly modelId: string;
  readonly dim = EMBED_DIM;
  private readonly weights: Float64Array; // [EMBED_DIM][FEATURES] row-major
  private readonly seed: number;

  constructor(seed: number, weightsPath?: string) {
    this.seed = seed;
    if (weightsPath) {
      const raw = readFileSync(weightsPath);
      if (raw.length !== 4 * EMBED_DIM * FEATURES) {
        throw new EncoderError(
          `weights file must hold ${EMBED_DIM * FEATURES} float32 values, got ${raw.length / 4}`,
        );
      }
      this.weights = new Float64Array(EMBED_DIM * FEATURES);
      for (let i = 0; i < this.weights.length; i++) this.weights[i] = raw.readFloatLE(4 * i);
      this.modelId = `pooled-linear-${EMBED_DIM}/file`;
    } else {
      const rng = new SplitMix64(seedFromParts('projection', seed));
      const scale = 1 / Math.sqrt(FEATURES);
      this.weights = rng.normals(EMBED_DIM * FEATURES);
      for (let i = 0; i < this.weights.length; i++) this.weights[i] *= scale;
      this.modelId = `pooled-linear-${EMBED_DIM}/builtin-seed${seed}`;
    }
  }

  encodeText(text: string): Float64Array {
    if (!text) throw new EncoderError('text must be non-empty');
    const rng = new SplitMix64(seedFromParts('text', this.seed, text));
    const v = rng.normals(EMBED_DIM);
    let norm = 0;
    for (const x of v) norm += x * x;
    norm = Math.sqrt(norm);
    for (let i = 0; i < v.length; i++) v[i] /= norm;
    return v;
  }

  /** Block-mean pooling to [d, FEATURES]. */
  pool(batch: ImageBatch): Float64Array {
    const { values, d, h, w } = batch;
    const bh = h / POOL;
    const bw = w / POOL;
    const inv = 1 / (bh * bw);
    const pooled = new Float64Array(d * FEATURES);
    for (let di = 0; di < d; di++) {
      const imgOff = di * h * w * 3;
      for (let py = 0; py < POOL; py++) {
        for (let px = 0; px < POOL; px++) {
          let r = 0;
          let g = 0;
          let b = 0;
          for (let yy = py * bh; yy < (py + 1) * bh; yy++) {
            let idx = imgOff + (yy * w + px * bw) * 3;
            for (let xx = 0; xx < bw; xx++) {
              r += values[idx];
              g += values[idx + 1];
              b += values[idx + 2];
              idx += 3;
            }
          }
          const f = di * FEATURES + (py * POOL + px) * 3;
          pooled[f] = r * inv;
          pooled[f + 1] = g * inv;
          pooled[f + 2] = b * inv;
        }
      }
    }
    return pooled;
  }

  /**
   * Embeddings plus the intermediates the backward pass needs:
   * y = W @ pooled, e = y / |y|.
   */
  encodeImagesWithState(batch: ImageBatch): { embeddings: Float64Array; y: Float64Array; norms: Float64Array } {
    const pooled = this.pool(batch);
    const d = batch.d;
    const y = new Float64Array(d * EMBED_DIM);
    for (let di = 0; di < d; di++) {
      for (let k = 0; k < EMBED_DIM; k++) {
        let acc = 0;
        const wOff = k * FEATURES;
        const pOff = di * FEATURES;
        for (let f = 0; f < FEATURES; f++) acc += this.weights[wOff + f] * pooled[pOff + f];
        y[di * EMBED_DIM + k] = acc;
      }
    }
    const norms = new Float64Array(d);
    const embeddings = new Float64Array(d * EMBED_DIM);
    for (let di = 0; di < d; di++) {
      let norm = 0;
      for (let k = 0; k < EMBED_DIM; k++) {
        const v = y[di * EMBED_DIM + k];
        norm += v * v;
      }
      norm = Math.max(Math.sqrt(norm), 1e-12);
      norms[di] = norm;
      for (let k = 0; k < EMBED_DIM; k++) {
        embeddings[di * EMBED_DIM + k] = y[di * EMBED_DIM + k] / norm;
      }
    }
    return { embeddings, y, norms };
  }

  encodeImages(batch: ImageBatch): Float64Array {
    return this.encodeImagesWithState(batch).embeddings;
  }

  /**
   * Pixel gradient for dLoss/dEmbedding = gradE: back through the
   * normalization, the projection, and the pooling.
   */
  pixelGradient(batch: ImageBatch, state: { embeddings: Float64Array; norms: Float64Array }, gradE: Float64Array): Float32Array {
    const { d, h, w } = batch;
    const bh = h / POOL;
    const bw = w / POOL;
    const inv = 1 / (bh * bw);
    const grad = new Float32Array(d * h * w * 3);
    const gy = new Float64Array(EMBED_DIM);
    const gm = new Float64Array(FEATURES);
    for (let di = 0; di < d; di++) {
      const eOff = di * EMBED_DIM;
      let dot = 0;
      for (let k = 0; k < EMBED_DIM; k++) dot += state.embeddings[eOff + k] * gradE[eOff + k];
      for (let k = 0; k < EMBED_DIM; k++) {
        gy[k] = (gradE[eOff + k] - state.embeddings[eOff + k] * dot) / state.norms[di];
      }
      gm.fill(0);
      for (let k = 0; k < EMBED_DIM; k++) {
        const wOff = k * FEATURES;
        const g = gy[k];
        if (g === 0) continue;
        for (let f = 0; f < FEATURES; f++) gm[f] += this.weights[wOff + f] * g;
      }
      const imgOff = di * h * w * 3;
      for (let py = 0; py < POOL; py++) {
        for (let px = 0; px < POOL; px++) {
          const f = (py * POOL + px) * 3;
          const gr = gm[f] * inv;
          const gg = gm[f + 1] * inv;
          const gb = gm[f + 2] * inv;
          for (let yy = py * bh; yy < (py + 1) * bh; yy++) {
            let idx = imgOff + (yy * w + px * bw) * 3;
            for (let xx = 0; xx < bw; xx++) {
              grad[idx] = gr;
              grad[idx + 1] = gg;
              grad[idx + 2] = gb;
              idx += 3;
            }
          }
        }
      }
    }
    return grad;
  }
}
