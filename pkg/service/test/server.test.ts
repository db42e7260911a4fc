import assert from 'node:assert/strict';
import { spawn } from 'node:child_process';
import { once } from 'node:events';
import path from 'node:path';
import { createInterface } from 'node:readline';
import { test } from 'node:test';
import { DualEncoder, EMBED_DIM } from '../src/encoder';
import { ServiceHandler } from '../src/server';
import { decodeTensor, encodeTensor } from '../src/tensor';

function handler(seed = 0): ServiceHandler {
  return new ServiceHandler(new DualEncoder(seed));
}

function f32Batch(d: number, size: number): Float32Array {
  const values = new Float32Array(d * size * size * 3);
  for (let i = 0; i < values.length; i++) values[i] = ((i * 31) % 701) / 701;
  return values;
}

test('info reports dim 512 and a model id', () => {
  const resp = handler().handle({ op: 'info', id: 0 }) as Record<string, unknown>;
  assert.equal(resp.ok, true);
  assert.equal(resp.dim, 512);
  assert.equal(typeof resp.model, 'string');
  assert.equal(resp.proto, 1);
});

test('echo returns the payload unchanged', () => {
  const payload = encodeTensor(new Float32Array([0, -0, 1.5]), [3]);
  const resp = handler().handle({ op: 'echo', id: 1, payload }) as Record<string, unknown>;
  assert.equal(resp.ok, true);
  assert.deepEqual(resp.payload, payload);
});

test('unknown op yields an error frame with the request id', () => {
  const resp = handler().handle({ op: 'transmogrify', id: 5 }) as Record<string, any>;
  assert.equal(resp.ok, false);
  assert.equal(resp.id, 5);
  assert.match(resp.error.message, /unknown op/);
});

test('missing integer id is a protocol error', () => {
  const resp = handler().handle({ op: 'info' }) as Record<string, any>;
  assert.equal(resp.ok, false);
  assert.equal(resp.error.type, 'protocol');
});

test('per-request failures keep the handler usable', () => {
  const h = handler();
  const bad = h.handle({ op: 'encode_image', id: 2, batch: { shape: [1], data: 'AAAA' } }) as Record<string, any>;
  assert.equal(bad.ok, false);
  const good = h.handle({ op: 'info', id: 3 }) as Record<string, any>;
  assert.equal(good.ok, true);
});

test('score_images returns loss, cosines and a shape-exact gradient', () => {
  const h = handler(4);
  const enc = new DualEncoder(4);
  const batchValues = f32Batch(2, 32);
  const resp = h.handle({
    op: 'score_images',
    id: 7,
    batch: encodeTensor(batchValues, [2, 32, 32, 3]),
    positive_embeddings: encodeTensor(enc.encodeText('p'), [1, EMBED_DIM]),
    positive_weights: [1.0],
    negative_embeddings: encodeTensor(new Float64Array(0), [0, EMBED_DIM]),
    negative_weights: [],
    negative_scale: 0.3,
  }) as Record<string, any>;
  assert.equal(resp.ok, true);
  assert.ok(Number.isFinite(resp.loss));
  const grad = decodeTensor(resp.grad);
  assert.deepEqual(grad.shape, [2, 32, 32, 3]);
  assert.equal(Buffer.from(resp.grad.data, 'base64').length, 4 * 2 * 32 * 32 * 3);
  const cos = decodeTensor(resp.cosines);
  assert.deepEqual(cos.shape, [2, 1]);
});

test('stdio subprocess answers frames end to end', async () => {
  const mainJs = path.join(__dirname, '..', 'src', 'main.js');
  const child = spawn(process.execPath, [mainJs, '--stdio', '--seed', '9'], {
    stdio: ['pipe', 'pipe', 'inherit'],
  });
  const lines = createInterface({ input: child.stdout });
  const pending: ((line: string) => void)[] = [];
  lines.on('line', (line) => pending.shift()?.(line));
  const request = (frame: unknown): Promise<any> =>
    new Promise((resolve) => {
      pending.push((line) => resolve(JSON.parse(line)));
      child.stdin.write(JSON.stringify(frame) + '\n');
    });

  const info = await request({ op: 'info', id: 0 });
  assert.equal(info.dim, 512);

  const enc = await request({ op: 'encode_text', id: 1, texts: ['a cat'] });
  assert.equal(enc.ok, true);
  assert.deepEqual(decodeTensor(enc.embeddings).shape, [1, 512]);

  const again = await request({ op: 'encode_text', id: 2, texts: ['a cat'] });
  assert.deepEqual(again.embeddings, enc.embeddings);

  const garbage = await request({ op: 'nope', id: 3 });
  assert.equal(garbage.ok, false);

  child.stdin.end();
  await once(child, 'exit');
});
