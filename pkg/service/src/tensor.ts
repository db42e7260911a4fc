/**
 * Tensor wire format: base64 of little-endian float32 bytes plus an
 * explicit shape. Round-trips are bit-exact for every finite float32
 * value including signed zeros.
 */

export interface WireTensor {
  shape: number[];
  dtype?: string;
  data: string;
}

export class ProtocolViolation extends Error {}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function encodeTensor(values: Float32Array | Float64Array, shape: number[]): WireTensor {
  const n = elementCount(shape);
  if (values.length !== n) {
    throw new ProtocolViolation(`tensor has ${values.length} values but shape ${JSON.stringify(shape)}`);
  }
  const f32 = values instanceof Float32Array ? values : Float32Array.from(values);
  // Ensure little-endian bytes regardless of host order.
  const buf = Buffer.alloc(4 * n);
  for (let i = 0; i < n; i++) {
    buf.writeFloatLE(f32[i], 4 * i);
  }
  return { shape: [...shape], dtype: 'f32', data: buf.toString('base64') };
}

export function decodeTensor(obj: unknown): { values: Float32Array; shape: number[] } {
  const t = obj as WireTensor;
  if (!t || !Array.isArray(t.shape) || typeof t.data !== 'string') {
    throw new ProtocolViolation('malformed tensor object');
  }
  if (t.dtype !== undefined && t.dtype !== 'f32') {
    throw new ProtocolViolation(`unsupported tensor dtype ${t.dtype}`);
  }
  const shape = t.shape.map((s) => {
    if (!Number.isInteger(s) || s < 0) throw new ProtocolViolation(`bad shape entry ${s}`);
    return s;
  });
  const raw = Buffer.from(t.data, 'base64');
  const n = elementCount(shape);
  if (raw.length !== 4 * n) {
    throw new ProtocolViolation(`tensor byte length ${raw.length} != shape ${JSON.stringify(shape)} (${4 * n} bytes)`);
  }
  const values = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    values[i] = raw.readFloatLE(4 * i);
  }
  return { values, shape };
}
