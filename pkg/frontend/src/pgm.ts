import type { PgmImage } from "./types.js";

// The service ships masks and source images as binary PGM (P5, maxval 255);
// browsers cannot decode that natively, so we parse it here.

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

function nextToken(bytes: Uint8Array, pos: number): { token: string; pos: number } {
  while (pos < bytes.length) {
    if (isSpace(bytes[pos])) {
      pos++;
    } else if (bytes[pos] === 0x23 /* '#' */) {
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
  if (start === pos) throw new Error("pgm: header ended early");
  return { token: String.fromCharCode(...bytes.subarray(start, pos)), pos };
}

export function parsePgm(buffer: ArrayBuffer): PgmImage {
  const bytes = new Uint8Array(buffer);
  let cursor = nextToken(bytes, 0);
  if (cursor.token !== "P5") {
    throw new Error(`pgm: unsupported magic ${cursor.token}`);
  }
  const fields: number[] = [];
  for (let i = 0; i < 3; i++) {
    cursor = nextToken(bytes, cursor.pos);
    const value = Number(cursor.token);
    if (!Number.isInteger(value)) throw new Error(`pgm: bad header field ${cursor.token}`);
    fields.push(value);
  }
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`pgm: maxval ${maxval} unsupported`);
  const start = cursor.pos + 1; // single whitespace after maxval
  const pixels = bytes.subarray(start, start + width * height);
  if (pixels.length < width * height) {
    throw new Error(`pgm: payload holds ${pixels.length} bytes, expected ${width * height}`);
  }
  return { width, height, pixels: new Uint8Array(pixels) };
}

/** Grayscale image to RGBA bytes for a canvas ImageData. */
export function grayToRgba(image: PgmImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(image.width * image.height * 4);
  for (let i = 0; i < image.pixels.length; i++) {
    const v = image.pixels[i];
    out[4 * i] = v;
    out[4 * i + 1] = v;
    out[4 * i + 2] = v;
    out[4 * i + 3] = 255;
  }
  return out;
}

/**
 * Mask to a colorized RGBA overlay: foreground pixels get the tint at the
 * given opacity, background stays fully transparent.
 */
export function maskToOverlayRgba(
  mask: PgmImage,
  rgb: [number, number, number],
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  const alpha = Math.round(255 * Math.min(1, Math.max(0, opacity)));
  const out = new Uint8ClampedArray(mask.width * mask.height * 4);
  for (let i = 0; i < mask.pixels.length; i++) {
    if (mask.pixels[i] > 0) {
      out[4 * i] = rgb[0];
      out[4 * i + 1] = rgb[1];
      out[4 * i + 2] = rgb[2];
      out[4 * i + 3] = alpha;
    }
  }
  return out;
}
