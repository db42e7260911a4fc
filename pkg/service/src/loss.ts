/**
 * Prompt-matching loss over an image batch:
 *
 *   loss = - sum_d sum_p w_p cos(E(img_d), e_p)
 *          + scale * sum_d sum_n w_n cos(E(img_d), e_n)
 *
 * summed over the D copies. Because the embeddings are unit-norm the
 * cosine is a dot product, dLoss/dE(img_d) is the fixed combination
 * q = -sum w_p e_p + scale * sum w_n e_n, and the encoder turns that
 * into an exact pixel gradient.
 */

import { DualEncoder, EMBED_DIM, EncoderError, ImageBatch } from './encoder';

export interface ScoreRequest {
  batch: ImageBatch;
  positiveEmbeddings: Float64Array; // [p, EMBED_DIM]
  positiveWeights: number[];
  negativeEmbeddings: Float64Array; // [n, EMBED_DIM]
  negativeWeights: number[];
  negativeScale: number;
}

export interface ScoreResult {
  loss: number;
  cosines: Float64Array; // [d, p + n]
  grad: Float32Array; // batch shape
}

function checkPromptBlock(emb: Float64Array, weights: number[], label: string): void {
  if (emb.length !== weights.length * EMBED_DIM) {
    throw new EncoderError(
      `${label}: ${weights.length} weights for ${emb.length / EMBED_DIM} embeddings`,
    );
  }
  for (const w of weights) {
    if (!Number.isFinite(w)) throw new EncoderError(`${label}: non-finite weight ${w}`);
  }
}

export function scoreImages(encoder: DualEncoder, req: ScoreRequest): ScoreResult {
  checkPromptBlock(req.positiveEmbeddings, req.positiveWeights, 'positive prompts');
  checkPromptBlock(req.negativeEmbeddings, req.negativeWeights, 'negative prompts');
  if (!Number.isFinite(req.negativeScale) || req.negativeScale < 0) {
    throw new EncoderError(`negative_scale must be finite and >= 0, got ${req.negativeScale}`);
  }

  const nPos = req.positiveWeights.length;
  const nNeg = req.negativeWeights.length;
  const d = req.batch.d;
  const state = encoder.encodeImagesWithState(req.batch);

  const cosines = new Float64Array(d * (nPos + nNeg));
  let loss = 0;
  for (let di = 0; di < d; di++) {
    const eOff = di * EMBED_DIM;
    for (let p = 0; p < nPos; p++) {
      let c = 0;
      for (let k = 0; k < EMBED_DIM; k++) {
        c += state.embeddings[eOff + k] * req.positiveEmbeddings[p * EMBED_DIM + k];
      }
      cosines[di * (nPos + nNeg) + p] = c;
      loss -= req.positiveWeights[p] * c;
    }
    for (let n = 0; n < nNeg; n++) {
      let c = 0;
      for (let k = 0; k < EMBED_DIM; k++) {
        c += state.embeddings[eOff + k] * req.negativeEmbeddings[n * EMBED_DIM + k];
      }
      cosines[di * (nPos + nNeg) + nPos + n] = c;
      loss += req.negativeScale * req.negativeWeights[n] * c;
    }
  }

  // dLoss/dE is the same prompt combination for every copy
  const q = new Float64Array(EMBED_DIM);
  for (let p = 0; p < nPos; p++) {
    for (let k = 0; k < EMBED_DIM; k++) {
      q[k] -= req.positiveWeights[p] * req.positiveEmbeddings[p * EMBED_DIM + k];
    }
  }
  for (let n = 0; n < nNeg; n++) {
    for (let k = 0; k < EMBED_DIM; k++) {
      q[k] += req.negativeScale * req.negativeWeights[n] * req.negativeEmbeddings[n * EMBED_DIM + k];
    }
  }
  const gradE = new Float64Array(d * EMBED_DIM);
  for (let di = 0; di < d; di++) gradE.set(q, di * EMBED_DIM);

  const grad = encoder.pixelGradient(req.batch, state, gradE);
  if (!Number.isFinite(loss)) throw new EncoderError(`non-finite loss ${loss}`);
  return { loss, cosines, grad };
}
