/** Little-endian float32 block copies, with a portable fallback. */

import os from 'os';

const HOST_LE = os.endianness() === 'LE';

export function floatsToLeBytes(data: Float32Array): Buffer {
  if (HOST_LE) {
    return Buffer.from(new Uint8Array(data.buffer, data.byteOffset, data.byteLength));
  }
  const out = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) out.writeFloatLE(data[i], i * 4);
  return out;
}

export function leBytesToFloats(blob: Buffer, byteStart: number, count: number): Float32Array {
  if (HOST_LE) {
    return new Float32Array(blob.buffer.slice(blob.byteOffset + byteStart, blob.byteOffset + byteStart + count * 4));
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = blob.readFloatLE(byteStart + i * 4);
  return out;
}
