/**
 * Directory extraction pipeline: images in, one descriptor store out.
 *
 * Files are identified by their stem, processed in sorted-id order (so the
 * store content is independent of directory listing order), and batched
 * through the model. Undecodable files are skipped with a warning and
 * listed in a JSON report written next to the store.
 */

import { promises as fs } from 'fs';
import path from 'path';

import { INPUT_SIZE, preprocess } from './image.js';
import { DescriptorStore, writeStore } from './store.js';
import { VitModel, ensureBackend } from './vit.js';
import {
  Checkpoint,
  VariantConfig,
  generateRandomWeights,
  loadCheckpoint,
  variantConfig,
} from './weights.js';

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg']);

export interface ExtractOptions {
  imagesDir: string;
  variant: string;
  weightsPath: string;
  outPath: string;
  batchSize?: number;
  log?: (message: string) => void;
}

export interface ExtractReport {
  variant: string;
  backend: string;
  extracted: number;
  skipped: { file: string; reason: string }[];
}

export async function listImages(dir: string): Promise<{ id: string; file: string }[]> {
  const entries = await fs.readdir(dir, { withFileTypes: true });
  const images: { id: string; file: string }[] = [];
  const seen = new Map<string, string>();
  for (const entry of entries) {
    if (!entry.isFile()) continue;
    const ext = path.extname(entry.name).toLowerCase();
    if (!IMAGE_EXTENSIONS.has(ext)) continue;
    const id = entry.name.slice(0, entry.name.length - ext.length);
    const previous = seen.get(id);
    if (previous) throw new Error(`files ${previous} and ${entry.name} share the id '${id}'`);
    seen.set(id, entry.name);
    images.push({ id, file: path.join(dir, entry.name) });
  }
  images.sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
  return images;
}

/** Resolve ``--weights``: a checkpoint path, or ``random:<seed>`` for a seeded random init. */
export async function resolveWeights(spec: string, config: VariantConfig): Promise<Checkpoint> {
  const random = /^random:(\d+)$/.exec(spec);
  if (random) return generateRandomWeights(config, parseInt(random[1], 10));
  return loadCheckpoint(spec, config);
}

export async function extractDirectory(options: ExtractOptions): Promise<ExtractReport> {
  const log = options.log ?? (() => {});
  const config = variantConfig(options.variant);
  const batchSize = Math.max(1, options.batchSize ?? 1);
  const checkpoint = await resolveWeights(options.weightsPath, config);
  const backend = await ensureBackend();
  const model = await VitModel.create(config, checkpoint);

  const listed = await listImages(options.imagesDir);
  if (listed.length === 0) throw new Error(`no images under ${options.imagesDir}`);
  const skipped: { file: string; reason: string }[] = [];
  const ready: { id: string; pixels: Float32Array }[] = [];
  for (const { id, file } of listed) {
    try {
      ready.push({ id, pixels: preprocess(await fs.readFile(file), file) });
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      skipped.push({ file, reason });
      log(`warning: skipping ${file}: ${reason}`);
    }
  }
  if (ready.length === 0) throw new Error('every image failed to decode');

  const pixelsPerImage = INPUT_SIZE * INPUT_SIZE * 3;
  const values = new Float32Array(ready.length * config.dim);
  for (let start = 0; start < ready.length; start += batchSize) {
    const stop = Math.min(start + batchSize, ready.length);
    const batch = new Float32Array((stop - start) * pixelsPerImage);
    for (let i = start; i < stop; i++) {
      batch.set(ready[i].pixels, (i - start) * pixelsPerImage);
    }
    const rows = await model.extractBatch(batch, stop - start);
    values.set(rows, start * config.dim);
    log(`extracted ${stop}/${ready.length}`);
  }
  model.dispose();

  for (const value of values) {
    if (!Number.isFinite(value)) throw new Error('model produced a non-finite descriptor value');
  }
  const store: DescriptorStore = {
    dim: config.dim,
    ids: ready.map((r) => r.id),
    values,
  };
  await writeStore(store, options.outPath);

  const report: ExtractReport = {
    variant: config.name,
    backend,
    extracted: ready.length,
    skipped,
  };
  await fs.writeFile(`${options.outPath}.report.json`, JSON.stringify(report, null, 2) + '\n');
  return report;
}
