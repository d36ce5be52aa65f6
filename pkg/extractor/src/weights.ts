/**
 * Model variants and the checkpoint file format.
 *
 * A checkpoint is: magic "VITW", u32 version (1), u32 JSON header length,
 * the UTF-8 JSON header, then a float32 little-endian data section. The
 * header lists the variant plus every tensor's name, shape, and offset
 * (in floats, relative to the data section). Tensor names and shapes are
 * documented in the README so real pretrained checkpoints can be converted;
 * `generateRandomWeights` produces a seeded random-initialized checkpoint
 * for testing and pipeline validation.
 */

import { promises as fs } from 'fs';

import { floatsToLeBytes, leBytesToFloats } from './binary.js';

export const WEIGHTS_MAGIC = 'VITW';
export const WEIGHTS_VERSION = 1;

export type VariantName = 'b16' | 'b32' | 'l16' | 'l32';

export interface VariantConfig {
  name: VariantName;
  patchSize: number;
  dim: number;
  layers: number;
  heads: number;
  mlpDim: number;
  imageSize: number;
}

const VARIANTS: Record<VariantName, VariantConfig> = {
  b16: { name: 'b16', patchSize: 16, dim: 768, layers: 12, heads: 12, mlpDim: 3072, imageSize: 384 },
  b32: { name: 'b32', patchSize: 32, dim: 768, layers: 12, heads: 12, mlpDim: 3072, imageSize: 384 },
  l16: { name: 'l16', patchSize: 16, dim: 1024, layers: 24, heads: 16, mlpDim: 4096, imageSize: 384 },
  l32: { name: 'l32', patchSize: 32, dim: 1024, layers: 24, heads: 16, mlpDim: 4096, imageSize: 384 },
};

export function variantConfig(name: string): VariantConfig {
  const config = VARIANTS[name.toLowerCase() as VariantName];
  if (!config) throw new Error(`unknown variant '${name}' (expected b16, b32, l16, l32)`);
  return config;
}

export function tokenCount(config: VariantConfig): number {
  const grid = config.imageSize / config.patchSize;
  return grid * grid + 1;
}

export interface TensorSpec {
  name: string;
  shape: number[];
}

/** Every tensor a variant's forward pass consumes, in a fixed order. */
export function tensorSpecs(config: VariantConfig): TensorSpec[] {
  const { dim, mlpDim, patchSize } = config;
  const specs: TensorSpec[] = [
    { name: 'cls_token', shape: [dim] },
    { name: 'pos_embedding', shape: [tokenCount(config), dim] },
    { name: 'patch_kernel', shape: [patchSize * patchSize * 3, dim] },
    { name: 'patch_bias', shape: [dim] },
  ];
  for (let i = 0; i < config.layers; i++) {
    const p = `layer${i}`;
    specs.push(
      { name: `${p}.ln1.gamma`, shape: [dim] },
      { name: `${p}.ln1.beta`, shape: [dim] },
      { name: `${p}.attn.q_kernel`, shape: [dim, dim] },
      { name: `${p}.attn.q_bias`, shape: [dim] },
      { name: `${p}.attn.k_kernel`, shape: [dim, dim] },
      { name: `${p}.attn.k_bias`, shape: [dim] },
      { name: `${p}.attn.v_kernel`, shape: [dim, dim] },
      { name: `${p}.attn.v_bias`, shape: [dim] },
      { name: `${p}.attn.out_kernel`, shape: [dim, dim] },
      { name: `${p}.attn.out_bias`, shape: [dim] },
      { name: `${p}.ln2.gamma`, shape: [dim] },
      { name: `${p}.ln2.beta`, shape: [dim] },
      { name: `${p}.mlp.fc1_kernel`, shape: [dim, mlpDim] },
      { name: `${p}.mlp.fc1_bias`, shape: [mlpDim] },
      { name: `${p}.mlp.fc2_kernel`, shape: [mlpDim, dim] },
      { name: `${p}.mlp.fc2_bias`, shape: [dim] },
    );
  }
  specs.push({ name: 'final_ln.gamma', shape: [dim] }, { name: 'final_ln.beta', shape: [dim] });
  return specs;
}

export interface Checkpoint {
  variant: VariantName;
  tensors: Map<string, { shape: number[]; data: Float32Array }>;
}

interface HeaderTensor {
  name: string;
  shape: number[];
  offset: number;
  length: number;
}

export function encodeCheckpoint(checkpoint: Checkpoint): Buffer {
  const entries: HeaderTensor[] = [];
  let offset = 0;
  for (const [name, tensor] of checkpoint.tensors) {
    const expected = tensor.shape.reduce((a, b) => a * b, 1);
    if (tensor.data.length !== expected) {
      throw new Error(`tensor ${name}: ${tensor.data.length} values for shape ${tensor.shape}`);
    }
    entries.push({ name, shape: tensor.shape, offset, length: tensor.data.length });
    offset += tensor.data.length;
  }
  const header = Buffer.from(
    JSON.stringify({ variant: checkpoint.variant, tensors: entries }),
    'utf-8',
  );
  const out = Buffer.alloc(4 + 4 + 4 + header.length + offset * 4);
  out.write(WEIGHTS_MAGIC, 0, 'ascii');
  out.writeUInt32LE(WEIGHTS_VERSION, 4);
  out.writeUInt32LE(header.length, 8);
  header.copy(out, 12);
  let cursor = 12 + header.length;
  for (const [, tensor] of checkpoint.tensors) {
    floatsToLeBytes(tensor.data).copy(out, cursor);
    cursor += tensor.data.length * 4;
  }
  return out;
}

export function decodeCheckpoint(blob: Buffer): Checkpoint {
  if (blob.length < 12 || blob.toString('ascii', 0, 4) !== WEIGHTS_MAGIC) {
    throw new Error('not a checkpoint file (bad magic)');
  }
  if (blob.readUInt32LE(4) !== WEIGHTS_VERSION) throw new Error('unsupported checkpoint version');
  const headerLength = blob.readUInt32LE(8);
  if (12 + headerLength > blob.length) throw new Error('truncated checkpoint header');
  const header = JSON.parse(blob.toString('utf-8', 12, 12 + headerLength)) as {
    variant: VariantName;
    tensors: HeaderTensor[];
  };
  const dataStart = 12 + headerLength;
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const entry of header.tensors) {
    const byteStart = dataStart + entry.offset * 4;
    const byteEnd = byteStart + entry.length * 4;
    if (byteEnd > blob.length) throw new Error(`truncated checkpoint data at ${entry.name}`);
    tensors.set(entry.name, {
      shape: entry.shape,
      data: leBytesToFloats(blob, byteStart, entry.length),
    });
  }
  return { variant: header.variant, tensors };
}

export async function loadCheckpoint(path: string, expectVariant?: VariantConfig): Promise<Checkpoint> {
  let blob: Buffer;
  try {
    blob = await fs.readFile(path);
  } catch (err) {
    throw new Error(
      `cannot read weights '${path}' (pass a checkpoint path; generate one with gen-weights): ${err}`,
    );
  }
  const checkpoint = decodeCheckpoint(blob);
  const config = variantConfig(checkpoint.variant);
  if (expectVariant && config.name !== expectVariant.name) {
    throw new Error(`checkpoint is for ${config.name}, requested ${expectVariant.name}`);
  }
  for (const spec of tensorSpecs(config)) {
    const tensor = checkpoint.tensors.get(spec.name);
    if (!tensor) throw new Error(`checkpoint is missing tensor ${spec.name}`);
    if (tensor.shape.join('x') !== spec.shape.join('x')) {
      throw new Error(`tensor ${spec.name}: shape ${tensor.shape} != expected ${spec.shape}`);
    }
  }
  return checkpoint;
}

/** Deterministic PRNG (mulberry32) plus a Box-Muller normal sampler. */
function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function normals(rng: () => number, n: number, std: number): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i += 2) {
    const u = Math.max(rng(), 1e-12);
    const v = rng();
    const r = Math.sqrt(-2 * Math.log(u)) * std;
    out[i] = r * Math.cos(2 * Math.PI * v);
    if (i + 1 < n) out[i + 1] = r * Math.sin(2 * Math.PI * v);
  }
  return out;
}

function xavierUniform(rng: () => number, fanIn: number, fanOut: number, n: number): Float32Array {
  const bound = Math.sqrt(6 / (fanIn + fanOut));
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = (rng() * 2 - 1) * bound;
  return out;
}

/** Random-initialized checkpoint: embeddings N(0, 0.02), kernels Xavier, unit layer norms. */
export function generateRandomWeights(config: VariantConfig, seed: number): Checkpoint {
  const rng = makeRng(seed);
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const spec of tensorSpecs(config)) {
    const n = spec.shape.reduce((a, b) => a * b, 1);
    let data: Float32Array;
    if (spec.name.endsWith('gamma')) {
      data = new Float32Array(n).fill(1);
    } else if (spec.name.endsWith('beta') || spec.name.endsWith('bias')) {
      data = new Float32Array(n);
    } else if (spec.name === 'cls_token' || spec.name === 'pos_embedding') {
      data = normals(rng, n, 0.02);
    } else {
      const [fanIn, fanOut] = spec.shape.length === 2 ? spec.shape : [n, n];
      data = xavierUniform(rng, fanIn, fanOut, n);
    }
    tensors.set(spec.name, { shape: spec.shape, data });
  }
  return { variant: config.name, tensors };
}
