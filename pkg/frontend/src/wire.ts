/**
 * Binary wire format, little-endian throughout:
 *
 *   frame     = "CLT1" | kind u8 | tag u64 | length u32 | body
 *   handshake = "CLT1" | version u16 | layout digest u64 | worker id u32
 *
 * Eager and payload frames carry `length` body bytes; RTS and PULL
 * carry none (an RTS's length field announces the coming payload size).
 */

export const MAGIC = Buffer.from('CLT1', 'ascii');
export const PROTOCOL_VERSION = 1;

export const FRAME_EAGER = 0;
export const FRAME_RTS = 1;
export const FRAME_PULL = 2;
export const FRAME_PAYLOAD = 3;

export const FRAME_HEADER_BYTES = 17;
export const HELLO_BYTES = 18;

export class WireError extends Error {}

export function encodeFrame(kind: number, tag: bigint, length: number, body?: Buffer): Buffer {
  const header = Buffer.alloc(FRAME_HEADER_BYTES);
  MAGIC.copy(header, 0);
  header.writeUInt8(kind, 4);
  header.writeBigUInt64LE(tag, 5);
  header.writeUInt32LE(length, 13);
  return body && body.length ? Buffer.concat([header, body]) : header;
}

export function encodeHello(digest: bigint, workerId: number): Buffer {
  const buf = Buffer.alloc(HELLO_BYTES);
  MAGIC.copy(buf, 0);
  buf.writeUInt16LE(PROTOCOL_VERSION, 4);
  buf.writeBigUInt64LE(digest, 6);
  buf.writeUInt32LE(workerId, 14);
  return buf;
}

export interface Hello {
  digest: bigint;
  workerId: number;
}

export function parseHello(data: Buffer): Hello {
  if (!data.subarray(0, 4).equals(MAGIC)) {
    throw new WireError('bad handshake magic; peer is not speaking this protocol');
  }
  const version = data.readUInt16LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new WireError(`protocol version mismatch: ours ${PROTOCOL_VERSION}, theirs ${version}`);
  }
  return { digest: data.readBigUInt64LE(6), workerId: data.readUInt32LE(14) };
}

export interface FrameHeader {
  kind: number;
  tag: bigint;
  length: number;
}

/** Parse one header; caller has checked that FRAME_HEADER_BYTES are available. */
export function parseFrameHeader(data: Buffer, offset = 0): FrameHeader {
  if (!data.subarray(offset, offset + 4).equals(MAGIC)) {
    throw new WireError('bad frame magic; stream is desynchronized');
  }
  const kind = data.readUInt8(offset + 4);
  if (kind > FRAME_PAYLOAD) {
    throw new WireError(`unknown frame kind ${kind}`);
  }
  return {
    kind,
    tag: data.readBigUInt64LE(offset + 5),
    length: data.readUInt32LE(offset + 13),
  };
}

/** Body bytes that follow a header of this kind. */
export function bodyLength(header: FrameHeader): number {
  return header.kind === FRAME_EAGER || header.kind === FRAME_PAYLOAD ? header.length : 0;
}
