/**
 * Deterministic payload generator shared with the script server.
 *
 * byte[i] = (a + b*i) mod 256 with a, b mixed from (seed, direction, k)
 * and b odd. The 32-bit mix must match the server bit for bit, so the
 * seed multiply uses Math.imul; everything after stays well under 2^53.
 */

export const DIR_AB = 0;
export const DIR_BA = 1;

export function pattern(seed: number, direction: number, k: number, size: number): Buffer {
  let h = Math.imul(seed >>> 0, 2654435761) >>> 0;
  h = (h + direction * 40503 + k * 69069 + 1) >>> 0;
  const a = h & 0xff;
  const b = ((h >>> 8) & 0xff) | 1;
  const out = Buffer.alloc(size);
  for (let i = 0; i < size; i++) {
    out[i] = (a + b * i) & 0xff;
  }
  return out;
}
