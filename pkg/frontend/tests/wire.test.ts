import { describe, expect, it } from 'vitest';

import { TagLayout } from '../src/tags.js';
import {
  FRAME_EAGER,
  FRAME_PULL,
  WireError,
  bodyLength,
  encodeFrame,
  encodeHello,
  parseFrameHeader,
  parseHello,
} from '../src/wire.js';

describe('wire format', () => {
  it('encodes the hello exactly as the server does', () => {
    const digest = new TagLayout().digest();
    expect(encodeHello(digest, 0).toString('hex')).toBe('434c5431010047cb8ae8b0756bb100000000');
    expect(encodeHello(digest, 7).toString('hex')).toBe('434c5431010047cb8ae8b0756bb107000000');
  });

  it('round-trips the hello', () => {
    const hello = parseHello(encodeHello(0xdeadbeefcafef00dn, 42));
    expect(hello.digest).toBe(0xdeadbeefcafef00dn);
    expect(hello.workerId).toBe(42);
  });

  it('rejects bad magic and version', () => {
    const good = encodeHello(1n, 0);
    const badMagic = Buffer.from(good);
    badMagic[0] = 0x58;
    expect(() => parseHello(badMagic)).toThrow(WireError);
    const badVersion = Buffer.from(good);
    badVersion.writeUInt16LE(9, 4);
    expect(() => parseHello(badVersion)).toThrow(/version/);
  });

  it('encodes frames exactly as the server does', () => {
    expect(encodeFrame(FRAME_EAGER, 0x3000000180000002n, 3, Buffer.from('abc')).toString('hex')).toBe(
      '434c543100020000800100003003000000616263',
    );
    expect(encodeFrame(FRAME_PULL, 1n, 0).toString('hex')).toBe('434c543102010000000000000000000000');
  });

  it('round-trips frame headers', () => {
    const buf = encodeFrame(3, 0xfeedfacefeedfacen, 12345);
    const header = parseFrameHeader(buf);
    expect(header).toEqual({ kind: 3, tag: 0xfeedfacefeedfacen, length: 12345 });
    expect(bodyLength(header)).toBe(12345);
    expect(bodyLength({ kind: FRAME_PULL, tag: 0n, length: 999 })).toBe(0);
  });

  it('rejects a desynchronized stream', () => {
    const buf = encodeFrame(0, 1n, 0);
    buf[1] = 0x00;
    expect(() => parseFrameHeader(buf)).toThrow(/magic/);
  });
});
