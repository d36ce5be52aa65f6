#!/usr/bin/env node
/**
 * Command-line front end.
 *
 *   extract     --images <dir> --variant {b16,b32,l16,l32}
 *               --weights <path or random:seed> --out <store> [--batch <n>]
 *   gen-weights --variant {b16,b32,l16,l32} --out <path> [--seed <n>]
 */

import { promises as fs } from 'fs';

import { extractDirectory } from './extract.js';
import { encodeCheckpoint, generateRandomWeights, variantConfig } from './weights.js';

function parseFlags(argv: string[], spec: Record<string, boolean>): Record<string, string> {
  const flags: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument '${arg}'`);
    const name = arg.slice(2);
    if (!(name in spec)) throw new Error(`unknown flag '--${name}'`);
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`flag '--${name}' needs a value`);
    flags[name] = value;
    i++;
  }
  for (const [name, required] of Object.entries(spec)) {
    if (required && !(name in flags)) throw new Error(`missing required flag '--${name}'`);
  }
  return flags;
}

async function cmdExtract(argv: string[]): Promise<void> {
  const flags = parseFlags(argv, { images: true, variant: true, weights: true, out: true, batch: false });
  const report = await extractDirectory({
    imagesDir: flags.images,
    variant: flags.variant,
    weightsPath: flags.weights,
    outPath: flags.out,
    batchSize: flags.batch ? parseInt(flags.batch, 10) : undefined,
    log: (message) => console.error(message),
  });
  console.log(
    `extracted ${report.extracted} descriptors (${report.variant}, ${report.backend} backend) -> ${flags.out}`,
  );
  if (report.skipped.length > 0) {
    console.error(`skipped ${report.skipped.length} files; see ${flags.out}.report.json`);
  }
}

async function cmdGenWeights(argv: string[]): Promise<void> {
  const flags = parseFlags(argv, { variant: true, out: true, seed: false });
  const config = variantConfig(flags.variant);
  const seed = flags.seed ? parseInt(flags.seed, 10) : 1;
  const checkpoint = generateRandomWeights(config, seed);
  await fs.writeFile(flags.out, encodeCheckpoint(checkpoint));
  console.log(`wrote random-initialized ${config.name} checkpoint (seed ${seed}) -> ${flags.out}`);
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === 'extract') {
      await cmdExtract(rest);
    } else if (command === 'gen-weights') {
      await cmdGenWeights(rest);
    } else {
      console.error('usage: vitriever-extract <extract|gen-weights> [flags]');
      return command ? 1 : 0;
    }
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const invoked = process.argv[1];
if (invoked && (invoked.endsWith('cli.js') || invoked.endsWith('vitriever-extract'))) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
