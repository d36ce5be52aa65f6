/**
 * Vision-Transformer forward pass producing one global descriptor per image.
 *
 * Pre-norm encoder stack: patch projection + class token + learned position
 * embeddings, then per layer LayerNorm -> multi-head self-attention ->
 * residual, LayerNorm -> GELU MLP -> residual. The descriptor is the class
 * token after the final LayerNorm (the classifier head is never applied).
 * Patches are packed row-major over the grid, pixels row-major inside a
 * patch, RGB innermost; GELU uses the tanh approximation; LayerNorm epsilon
 * is 1e-6.
 *
 * Runs on the tfjs WASM backend when it initializes, falling back to the
 * pure-JS CPU backend.
 */

import * as tf from '@tensorflow/tfjs-core';
import '@tensorflow/tfjs-backend-cpu';
import { createRequire } from 'module';
import path from 'path';

import { INPUT_SIZE } from './image.js';
import { Checkpoint, VariantConfig, tokenCount } from './weights.js';

let backendReady: Promise<string> | null = null;

/** Initialize the fastest available backend once per process. */
export function ensureBackend(): Promise<string> {
  if (!backendReady) {
    backendReady = (async () => {
      try {
        const wasm = await import('@tensorflow/tfjs-backend-wasm');
        const require = createRequire(import.meta.url);
        const dist = path.dirname(require.resolve('@tensorflow/tfjs-backend-wasm'));
        wasm.setWasmPaths(dist + path.sep);
        if (await tf.setBackend('wasm')) {
          await tf.ready();
          return 'wasm';
        }
      } catch {
        // fall through to the CPU backend
      }
      await tf.setBackend('cpu');
      await tf.ready();
      return 'cpu';
    })();
  }
  return backendReady;
}

const LN_EPS = 1e-6;
const GELU_C = Math.sqrt(2 / Math.PI);

export class VitModel {
  private readonly config: VariantConfig;
  private readonly weights: Map<string, tf.Tensor>;

  private constructor(config: VariantConfig, weights: Map<string, tf.Tensor>) {
    this.config = config;
    this.weights = weights;
  }

  static async create(config: VariantConfig, checkpoint: Checkpoint): Promise<VitModel> {
    await ensureBackend();
    const weights = new Map<string, tf.Tensor>();
    for (const [name, tensor] of checkpoint.tensors) {
      weights.set(name, tf.tensor(tensor.data, tensor.shape, 'float32'));
    }
    return new VitModel(config, weights);
  }

  get dim(): number {
    return this.config.dim;
  }

  dispose(): void {
    for (const tensor of this.weights.values()) tensor.dispose();
    this.weights.clear();
  }

  private weight(name: string): tf.Tensor {
    const tensor = this.weights.get(name);
    if (!tensor) throw new Error(`missing weight tensor ${name}`);
    return tensor;
  }

  /**
   * Descriptors for a batch of preprocessed images.
   *
   * `inputs` holds batch * 384 * 384 * 3 values in [-1, 1]; the result has
   * one row of `dim` values per image, in batch order.
   */
  async extractBatch(inputs: Float32Array, batch: number): Promise<Float32Array> {
    await ensureBackend();
    const { patchSize, dim, layers, heads } = this.config;
    const grid = INPUT_SIZE / patchSize;
    const tokens = tokenCount(this.config);
    const headDim = dim / heads;
    if (inputs.length !== batch * INPUT_SIZE * INPUT_SIZE * 3) {
      throw new Error(`expected ${batch} preprocessed ${INPUT_SIZE}x${INPUT_SIZE} images`);
    }

    // Two implementation constraints drive the shapes below. A whole-forward
    // tidy scope would pin every intermediate of all layers at once and
    // exhaust the WASM heap, so each stage gets its own scope. And the WASM
    // matMul is only fast for 2-D operands or equal batch dimensions
    // (broadcasting a shared right operand hits a slow generic path), so
    // dense layers run on [batch*tokens, dim] and attention on
    // [batch*heads, tokens, headDim].
    let x = tf.tidy(() => {
      const images = tf.tensor(inputs, [batch, INPUT_SIZE, INPUT_SIZE, 3], 'float32');
      // [B, H, W, C] -> [B, grid*grid, patch*patch*3], grid row-major
      const patches = tf.reshape(
        tf.transpose(
          tf.reshape(images, [batch, grid, patchSize, grid, patchSize, 3]),
          [0, 1, 3, 2, 4, 5],
        ),
        [batch * grid * grid, patchSize * patchSize * 3],
      );
      const embedded = tf.reshape(
        tf.add(
          tf.matMul(patches, this.weight('patch_kernel') as tf.Tensor2D),
          this.weight('patch_bias'),
        ),
        [batch, grid * grid, dim],
      );
      const cls = tf.tile(tf.reshape(this.weight('cls_token'), [1, 1, dim]), [batch, 1, 1]);
      return tf.add(tf.concat([cls, embedded], 1), this.weight('pos_embedding'));
    });

    const scale = 1 / Math.sqrt(headDim);
    for (let i = 0; i < layers; i++) {
      const p = `layer${i}`;
      const next = tf.tidy(() => {
        const attnIn = tf.reshape(this.layerNorm(x, `${p}.ln1`), [batch * tokens, dim]);
        const q = this.splitHeads(
          tf.mul(this.dense(attnIn, `${p}.attn.q`), scale),
          batch, tokens, heads, headDim,
        );
        const k = this.splitHeads(this.dense(attnIn, `${p}.attn.k`), batch, tokens, heads, headDim);
        const v = this.splitHeads(this.dense(attnIn, `${p}.attn.v`), batch, tokens, heads, headDim);
        const attention = tf.softmax(tf.matMul(q, k, false, true), -1);
        const context = tf.reshape(
          tf.transpose(
            tf.reshape(tf.matMul(attention, v), [batch, heads, tokens, headDim]),
            [0, 2, 1, 3],
          ),
          [batch * tokens, dim],
        );
        const afterAttention = tf.add(
          x,
          tf.reshape(this.dense(context, `${p}.attn.out`), [batch, tokens, dim]),
        );
        const mlpIn = tf.reshape(this.layerNorm(afterAttention, `${p}.ln2`), [batch * tokens, dim]);
        const hidden = this.gelu(this.dense(mlpIn, `${p}.mlp.fc1`));
        return tf.add(
          afterAttention,
          tf.reshape(this.dense(hidden, `${p}.mlp.fc2`), [batch, tokens, dim]),
        );
      });
      x.dispose();
      x = next;
    }

    const result = tf.tidy(() => {
      const normed = this.layerNorm(x, 'final_ln');
      return tf.reshape(tf.slice(normed, [0, 0, 0], [batch, 1, dim]), [batch, dim]);
    });
    x.dispose();
    const data = (await result.data()) as Float32Array;
    result.dispose();
    return Float32Array.from(data);
  }

  private dense(x: tf.Tensor, prefix: string): tf.Tensor {
    return tf.add(
      tf.matMul(x as tf.Tensor2D, this.weight(`${prefix}_kernel`) as tf.Tensor2D),
      this.weight(`${prefix}_bias`),
    );
  }

  private splitHeads(
    x: tf.Tensor,
    batch: number,
    tokens: number,
    heads: number,
    headDim: number,
  ): tf.Tensor {
    return tf.reshape(
      tf.transpose(tf.reshape(x, [batch, tokens, heads, headDim]), [0, 2, 1, 3]),
      [batch * heads, tokens, headDim],
    );
  }

  private layerNorm(x: tf.Tensor, prefix: string): tf.Tensor {
    const mean = tf.mean(x, -1, true);
    const centered = tf.sub(x, mean);
    const variance = tf.mean(tf.square(centered), -1, true);
    const normed = tf.div(centered, tf.sqrt(tf.add(variance, LN_EPS)));
    return tf.add(tf.mul(normed, this.weight(`${prefix}.gamma`)), this.weight(`${prefix}.beta`));
  }

  private gelu(x: tf.Tensor): tf.Tensor {
    const inner = tf.mul(GELU_C, tf.add(x, tf.mul(0.044715, tf.mul(x, tf.mul(x, x)))));
    return tf.mul(tf.mul(x, 0.5), tf.add(1, tf.tanh(inner)));
  }
}
