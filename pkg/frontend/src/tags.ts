/**
 * 64-bit tag codec, twin of the Python side.
 *
 * Top 4 bits carry the message kind; the remainder is either
 * (source PE, counter) for the messaging kinds or
 * (channel id, direction, counter) for the channel kind, with the
 * direction flag sitting in the top bit of the counter field.
 * Tags are bigints throughout: they do not fit in a double.
 */

export const TAG_BITS = 64;
export const KIND_BITS = 4;

export const KIND_EAGER = 0;
export const KIND_PROBE = 1;
export const KIND_DEVICE = 2;
export const KIND_CHANNEL = 3;

export const FULL_MASK = (1n << 64n) - 1n;

export class TagError extends Error {}

function checkField(name: string, value: bigint, bits: number): void {
  if (value < 0n || value >= 1n << BigInt(bits)) {
    throw new TagError(`${name}=${value} does not fit in ${bits} bits`);
  }
}

export interface TagLayoutSpec {
  peBits?: number;
  counterBits?: number;
  channelIdBits?: number;
  channelCounterBits?: number;
}

export class TagLayout {
  readonly peBits: number;
  readonly counterBits: number;
  readonly channelIdBits: number;
  readonly channelCounterBits: number;

  constructor(spec: TagLayoutSpec = {}) {
    this.peBits = spec.peBits ?? 32;
    this.counterBits = spec.counterBits ?? 28;
    this.channelIdBits = spec.channelIdBits ?? 28;
    this.channelCounterBits = spec.channelCounterBits ?? 32;
    if (KIND_BITS + this.peBits + this.counterBits !== TAG_BITS) {
      throw new TagError(
        `messaging layout must tile 64 bits: 4+${this.peBits}+${this.counterBits} != 64`,
      );
    }
    if (KIND_BITS + this.channelIdBits + this.channelCounterBits !== TAG_BITS) {
      throw new TagError(
        `channel layout must tile 64 bits: 4+${this.channelIdBits}+${this.channelCounterBits} != 64`,
      );
    }
    if (this.channelCounterBits < 2) {
      throw new TagError('channel counter field needs at least 2 bits');
    }
  }

  encodeMessaging(kind: number, sourcePe: number, counter: number): bigint {
    if (kind !== KIND_EAGER && kind !== KIND_PROBE && kind !== KIND_DEVICE) {
      throw new TagError(`kind ${kind} is not a messaging kind`);
    }
    checkField('source_pe', BigInt(sourcePe), this.peBits);
    checkField('counter', BigInt(counter), this.counterBits);
    return (
      (BigInt(kind) << BigInt(this.peBits + this.counterBits)) |
      (BigInt(sourcePe) << BigInt(this.counterBits)) |
      BigInt(counter)
    );
  }

  encodeChannel(channelId: number, direction: number, counter: number): bigint {
    checkField('channel_id', BigInt(channelId), this.channelIdBits);
    if (direction !== 0 && direction !== 1) {
      throw new TagError(`direction=${direction} must be 0 or 1`);
    }
    checkField('counter', BigInt(counter), this.channelCounterBits - 1);
    return (
      (BigInt(KIND_CHANNEL) << BigInt(this.channelIdBits + this.channelCounterBits)) |
      (BigInt(channelId) << BigInt(this.channelCounterBits)) |
      (BigInt(direction) << BigInt(this.channelCounterBits - 1)) |
      BigInt(counter)
    );
  }

  kindOf(tag: bigint): number {
    return Number((tag >> BigInt(TAG_BITS - KIND_BITS)) & 0xfn);
  }

  decode(tag: bigint): DecodedTag {
    checkField('tag', tag, TAG_BITS);
    const kind = this.kindOf(tag);
    if (kind === KIND_CHANNEL) {
      const ccb = BigInt(this.channelCounterBits);
      return {
        kind,
        channelId: Number((tag >> ccb) & ((1n << BigInt(this.channelIdBits)) - 1n)),
        direction: Number((tag >> (ccb - 1n)) & 1n),
        counter: Number(tag & ((1n << (ccb - 1n)) - 1n)),
      };
    }
    if (kind === KIND_EAGER || kind === KIND_PROBE || kind === KIND_DEVICE) {
      return {
        kind,
        sourcePe: Number((tag >> BigInt(this.counterBits)) & ((1n << BigInt(this.peBits)) - 1n)),
        counter: Number(tag & ((1n << BigInt(this.counterBits)) - 1n)),
      };
    }
    throw new TagError(`unknown kind code ${kind} in tag 0x${tag.toString(16)}`);
  }

  /**
   * FNV-1a 64 over the layout fields and kind codes; both handshake
   * peers must present the same value before tagged traffic flows.
   */
  digest(): bigint {
    const text =
      `L${this.peBits},${this.counterBits},${this.channelIdBits},${this.channelCounterBits};` +
      `K${KIND_EAGER},${KIND_PROBE},${KIND_DEVICE},${KIND_CHANNEL}`;
    return fnv1a64(Buffer.from(text, 'ascii'));
  }
}

export interface DecodedTag {
  kind: number;
  sourcePe?: number;
  channelId?: number;
  direction?: number;
  counter: number;
}

export function fnv1a64(data: Buffer): bigint {
  let h = 0xcbf29ce484222325n;
  for (const b of data) {
    h ^= BigInt(b);
    h = (h * 0x100000001b3n) & FULL_MASK;
  }
  return h;
}

export const DEFAULT_LAYOUT = new TagLayout();
