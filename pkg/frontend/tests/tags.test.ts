import { describe, expect, it } from 'vitest';

import {
  KIND_CHANNEL,
  KIND_DEVICE,
  KIND_EAGER,
  KIND_PROBE,
  TagError,
  TagLayout,
} from '../src/tags.js';
import { makeRng, randint } from './harness.js';

const layout = new TagLayout();

describe('tag codec', () => {
  it('matches the server layout digest', () => {
    // frozen from the peer implementation; the handshake compares these
    expect(layout.digest()).toBe(0xb16b75b0e88acb47n);
  });

  it('reproduces the frozen raw tag values', () => {
    expect(layout.encodeChannel(1, 1, 2)).toBe(0x3000000180000002n);
    expect(layout.encodeMessaging(KIND_DEVICE, 3, 5)).toBe(0x2000000030000005n);
    expect(layout.encodeMessaging(KIND_PROBE, 2 ** 32 - 1, 2 ** 28 - 1)).toBe(0x1fffffffffffffffn);
  });

  it('round-trips randomized channel tags', () => {
    const rng = makeRng(11);
    for (let i = 0; i < 2000; i++) {
      const id = randint(rng, 0, 2 ** 28 - 1);
      const dir = randint(rng, 0, 1);
      const ctr = randint(rng, 0, 2 ** 31 - 1);
      const tag = layout.encodeChannel(id, dir, ctr);
      const back = layout.decode(tag);
      expect(back).toEqual({ kind: KIND_CHANNEL, channelId: id, direction: dir, counter: ctr });
    }
  });

  it('round-trips randomized messaging tags', () => {
    const rng = makeRng(12);
    const kinds = [KIND_EAGER, KIND_PROBE, KIND_DEVICE];
    for (let i = 0; i < 2000; i++) {
      const kind = kinds[randint(rng, 0, 2)];
      const pe = randint(rng, 0, 2 ** 32 - 1);
      const ctr = randint(rng, 0, 2 ** 28 - 1);
      const tag = layout.encodeMessaging(kind, pe, ctr);
      expect(layout.decode(tag)).toEqual({ kind, sourcePe: pe, counter: ctr });
    }
  });

  it('rejects field overflow', () => {
    expect(() => layout.encodeChannel(2 ** 28, 0, 0)).toThrow(TagError);
    expect(() => layout.encodeChannel(0, 0, 2 ** 31)).toThrow(TagError);
    expect(() => layout.encodeChannel(0, 2, 0)).toThrow(TagError);
    expect(() => layout.encodeMessaging(KIND_CHANNEL, 0, 0)).toThrow(TagError);
    expect(() => layout.encodeMessaging(KIND_EAGER, 2 ** 32, 0)).toThrow(TagError);
  });

  it('rejects layouts that do not tile 64 bits', () => {
    expect(() => new TagLayout({ peBits: 30 })).toThrow(TagError);
    expect(() => new TagLayout({ channelIdBits: 10 })).toThrow(TagError);
  });
});
