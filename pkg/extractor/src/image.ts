/**
 * Image decoding and model-input preprocessing.
 *
 * Every image is decoded to RGB, bilinearly resized to 384x384, and scaled
 * from [0, 255] to [-1, 1] via (v - 127.5) / 127.5.
 */

import { promises as fs } from 'fs';
import { PNG } from 'pngjs';
import jpeg from 'jpeg-js';

export const INPUT_SIZE = 384;

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples, width * height * 3 entries in [0, 255]. */
  pixels: Float32Array;
}

export function decodeImage(blob: Buffer, name: string): RgbImage {
  let width: number;
  let height: number;
  let rgba: Uint8Array;
  if (blob.length >= 8 && blob.readUInt32BE(0) === 0x89504e47) {
    const png = PNG.sync.read(blob);
    width = png.width;
    height = png.height;
    rgba = png.data;
  } else if (blob.length >= 2 && blob.readUInt16BE(0) === 0xffd8) {
    const img = jpeg.decode(blob, { useTArray: true, maxMemoryUsageInMB: 1024 });
    width = img.width;
    height = img.height;
    rgba = img.data;
  } else {
    throw new Error(`${name}: not a PNG or JPEG file`);
  }
  if (width < 1 || height < 1) throw new Error(`${name}: zero-area image`);
  const pixels = new Float32Array(width * height * 3);
  for (let i = 0, j = 0; i < width * height; i++, j += 4) {
    pixels[i * 3] = rgba[j];
    pixels[i * 3 + 1] = rgba[j + 1];
    pixels[i * 3 + 2] = rgba[j + 2];
  }
  return { width, height, pixels };
}

/** Bilinear resample with half-pixel centers (identity when sizes match). */
export function resizeBilinear(image: RgbImage, outWidth: number, outHeight: number): RgbImage {
  const { width, height, pixels } = image;
  if (width === outWidth && height === outHeight) {
    return { width, height, pixels: pixels.slice() };
  }
  const out = new Float32Array(outWidth * outHeight * 3);
  const scaleX = width / outWidth;
  const scaleY = height / outHeight;
  for (let oy = 0; oy < outHeight; oy++) {
    const sy = Math.min(Math.max((oy + 0.5) * scaleY - 0.5, 0), height - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, height - 1);
    const fy = sy - y0;
    for (let ox = 0; ox < outWidth; ox++) {
      const sx = Math.min(Math.max((ox + 0.5) * scaleX - 0.5, 0), width - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, width - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const p00 = pixels[(y0 * width + x0) * 3 + c];
        const p01 = pixels[(y0 * width + x1) * 3 + c];
        const p10 = pixels[(y1 * width + x0) * 3 + c];
        const p11 = pixels[(y1 * width + x1) * 3 + c];
        const top = p00 + (p01 - p00) * fx;
        const bottom = p10 + (p11 - p10) * fx;
        out[(oy * outWidth + ox) * 3 + c] = top + (bottom - top) * fy;
      }
    }
  }
  return { width: outWidth, height: outHeight, pixels: out };
}

/** Map pixel values from [0, 255] onto [-1, 1]. */
export function scalePixels(pixels: Float32Array): Float32Array {
  const out = new Float32Array(pixels.length);
  for (let i = 0; i < pixels.length; i++) {
    out[i] = (pixels[i] - 127.5) / 127.5;
  }
  return out;
}

/** Decode + resize + scale: the full path from file bytes to a model input. */
export function preprocess(blob: Buffer, name: string): Float32Array {
  const resized = resizeBilinear(decodeImage(blob, name), INPUT_SIZE, INPUT_SIZE);
  return scalePixels(resized.pixels);
}

export async function preprocessFile(path: string): Promise<Float32Array> {
  return preprocess(await fs.readFile(path), path);
}
