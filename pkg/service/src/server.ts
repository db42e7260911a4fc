/**
 * Frame dispatch and transports for the scoring service.
 *
 * One JSON object per line; every request gets exactly one response with
 * the matching id. Per-request failures produce error frames and the
 * process stays alive; only malformed startup configuration is fatal.
 */

import { createInterface } from 'node:readline';
import { createServer, Server, Socket } from 'node:net';
import { Readable, Writable } from 'node:stream';
import { DualEncoder, EMBED_DIM, batchFromShape } from './encoder';
import { scoreImages } from './loss';
import { ProtocolViolation, decodeTensor, encodeTensor } from './tensor';

export const PROTOCOL_VERSION = 1;

type Frame = Record<string, unknown>;

function errorFrame(id: unknown, type: string, message: string): Frame {
  return { id: id ?? null, ok: false, error: { type, message } };
}

function requireStringArray(value: unknown, field: string): string[] {
  if (!Array.isArray(value) || value.length === 0 || value.some((t) => typeof t !== 'string' || !t)) {
    throw new ProtocolViolation(`${field} must be a non-empty array of non-empty strings`);
  }
  return value as string[];
}

function requireNumberArray(value: unknown, field: string): number[] {
  if (!Array.isArray(value) || value.some((x) => typeof x !== 'number')) {
    throw new ProtocolViolation(`${field} must be an array of numbers`);
  }
  return value as number[];
}

function decodeEmbeddings(obj: unknown, field: string): Float64Array {
  const { values, shape } = decodeTensor(obj);
  if (shape.length !== 2 || shape[1] !== EMBED_DIM) {
    throw new ProtocolViolation(`${field} must have shape [n, ${EMBED_DIM}], got ${JSON.stringify(shape)}`);
  }
  return Float64Array.from(values);
}

export class ServiceHandler {
  constructor(private readonly encoder: DualEncoder) {}

  handle(frame: Frame): Frame {
    const id = frame.id;
    if (typeof id !== 'number' || !Number.isInteger(id)) {
      return errorFrame(null, 'protocol', 'request id must be an integer');
    }
    try {
      switch (frame.op) {
        case 'info':
          return { id, ok: true, dim: this.encoder.dim, model: this.encoder.modelId, proto: PROTOCOL_VERSION };
        case 'encode_text': {
          const texts = requireStringArray(frame.texts, 'texts');
          const out = new Float64Array(texts.length * EMBED_DIM);
          texts.forEach((t, i) => out.set(this.encoder.encodeText(t), i * EMBED_DIM));
          return { id, ok: true, embeddings: encodeTensor(out, [texts.length, EMBED_DIM]) };
        }
        case 'encode_image': {
          const { values, shape } = decodeTensor(frame.batch);
          const batch = batchFromShape(values, shape);
          const emb = this.encoder.encodeImages(batch);
          return { id, ok: true, embeddings: encodeTensor(emb, [batch.d, EMBED_DIM]) };
        }
        case 'score_images': {
          const { values, shape } = decodeTensor(frame.batch);
          const batch = batchFromShape(values, shape);
          const result = scoreImages(this.encoder, {
            batch,
            positiveEmbeddings: decodeEmbeddings(frame.positive_embeddings, 'positive_embeddings'),
            positiveWeights: requireNumberArray(frame.positive_weights, 'positive_weights'),
            negativeEmbeddings: decodeEmbeddings(frame.negative_embeddings, 'negative_embeddings'),
            negativeWeights: requireNumberArray(frame.negative_weights, 'negative_weights'),
            negativeScale: typeof frame.negative_scale === 'number' ? frame.negative_scale : NaN,
          });
          const nPrompts = result.cosines.length / batch.d;
          return {
            id,
            ok: true,
            loss: result.loss,
            cosines: encodeTensor(result.cosines, [batch.d, nPrompts]),
            grad: encodeTensor(result.grad, shape),
          };
        }
        case 'echo':
          return { id, ok: true, payload: frame.payload };
        default:
          return errorFrame(id, 'protocol', `unknown op ${JSON.stringify(frame.op)}`);
      }
    } catch (err) {
      const e = err as Error;
      return errorFrame(id, e.constructor.name, e.message);
    }
  }
}

export function serveStream(handler: ServiceHandler, input: Readable, output: Writable): Promise<void> {
  return new Promise((resolve) => {
    const lines = createInterface({ input, crlfDelay: Infinity });
    lines.on('line', (line) => {
      if (!line.trim()) return;
      let response: Frame;
      try {
        response = handler.handle(JSON.parse(line) as Frame);
      } catch (err) {
        response = errorFrame(null, 'protocol', `malformed frame: ${(err as Error).message}`);
      }
      output.write(JSON.stringify(response) + '\n');
    });
    lines.on('close', resolve);
  });
}

export function serveTcp(handler: ServiceHandler, host: string, port: number, onListening?: (port: number) => void): Server {
  const server = createServer((socket: Socket) => {
    void serveStream(handler, socket, socket);
  });
  server.listen(port, host, () => {
    const addr = server.address();
    if (onListening && addr && typeof addr === 'object') onListening(addr.port);
  });
  return server;
}
