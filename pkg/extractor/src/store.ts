/**
 * Binary descriptor store I/O.
 *
 * Layout: magic "VITD", u32 version (1), u64 row count, u32 dimension,
 * u8 value type tag (1 = little-endian float32); then count*dim float32
 * values row-major; then count ids, each a u32 byte length plus UTF-8
 * bytes. Everything little-endian. This matches the retrieval engine's
 * store format byte for byte.
 */

import { promises as fs } from 'fs';

import { floatsToLeBytes, leBytesToFloats } from './binary.js';

export const STORE_MAGIC = 'VITD';
export const STORE_VERSION = 1;
export const VALUE_TYPE_F32 = 1;
const HEADER_SIZE = 4 + 4 + 8 + 4 + 1;

export interface DescriptorStore {
  dim: number;
  ids: string[];
  /** Row-major values, ids.length * dim entries. */
  values: Float32Array;
}

export function encodeStore(store: DescriptorStore): Buffer {
  const { dim, ids, values } = store;
  if (values.length !== ids.length * dim) {
    throw new Error(`value count ${values.length} != ${ids.length} rows * ${dim} dim`);
  }
  for (const value of values) {
    if (!Number.isFinite(value)) throw new Error('store values must be finite');
  }
  const seen = new Set<string>();
  const idBuffers: Buffer[] = [];
  let idBytes = 0;
  for (const id of ids) {
    if (id.includes('\n') || id.includes('\r')) throw new Error(`id contains a newline: ${id}`);
    if (seen.has(id)) throw new Error(`duplicate id: ${id}`);
    seen.add(id);
    const raw = Buffer.from(id, 'utf-8');
    idBuffers.push(raw);
    idBytes += 4 + raw.length;
  }

  const out = Buffer.alloc(HEADER_SIZE + values.length * 4 + idBytes);
  out.write(STORE_MAGIC, 0, 'ascii');
  out.writeUInt32LE(STORE_VERSION, 4);
  out.writeBigUInt64LE(BigInt(ids.length), 8);
  out.writeUInt32LE(dim, 16);
  out.writeUInt8(VALUE_TYPE_F32, 20);
  floatsToLeBytes(values).copy(out, HEADER_SIZE);
  let offset = HEADER_SIZE + values.length * 4;
  for (const raw of idBuffers) {
    out.writeUInt32LE(raw.length, offset);
    raw.copy(out, offset + 4);
    offset += 4 + raw.length;
  }
  return out;
}

export async function writeStore(store: DescriptorStore, path: string): Promise<void> {
  await fs.writeFile(path, encodeStore(store));
}

export function decodeStore(blob: Buffer): DescriptorStore {
  if (blob.length < HEADER_SIZE) throw new Error('store shorter than its header');
  if (blob.toString('ascii', 0, 4) !== STORE_MAGIC) throw new Error('bad store magic');
  if (blob.readUInt32LE(4) !== STORE_VERSION) throw new Error('unsupported store version');
  const count = Number(blob.readBigUInt64LE(8));
  const dim = blob.readUInt32LE(16);
  if (blob.readUInt8(20) !== VALUE_TYPE_F32) throw new Error('unsupported value type tag');

  const valueBytes = count * dim * 4;
  if (HEADER_SIZE + valueBytes > blob.length) throw new Error('truncated value block');
  const values = leBytesToFloats(blob, HEADER_SIZE, count * dim);
  const ids: string[] = [];
  let offset = HEADER_SIZE + valueBytes;
  for (let i = 0; i < count; i++) {
    if (offset + 4 > blob.length) throw new Error('truncated id block');
    const length = blob.readUInt32LE(offset);
    offset += 4;
    if (offset + length > blob.length) throw new Error('truncated id block');
    ids.push(blob.toString('utf-8', offset, offset + length));
    offset += length;
  }
  if (offset !== blob.length) throw new Error('trailing bytes after id block');
  return { dim, ids, values };
}

export async function readStore(path: string): Promise<DescriptorStore> {
  return decodeStore(await fs.readFile(path));
}
