/**
 * One endpoint of a bidirectional chare-to-chare stream, driven from
 * outside the runtime. Tags are derived, never exchanged: each
 * direction owns a counter, so the kth send in a direction and the kth
 * receive posted for it carry the same tag and meet in the peer's
 * matching engine. Direction 0 belongs to the endpoint whose
 * (collection, element, PE) triple sorts lower.
 */

import { DeviceBuffer, DeviceRegion } from './devicesim.js';
import { Completion, WireWorker } from './worker.js';

export class ChannelError extends Error {}

/** Chare identity; orders the channel's two directions. */
export interface ChareId {
  collection: number;
  element: number;
  pe: number;
}

export function chareId(collection: number, element: number, pe: number): ChareId {
  return { collection, element, pe };
}

function triple(id: ChareId): [number, number, number] {
  return [id.collection, id.element, id.pe];
}

function lessOrEqual(a: ChareId, b: ChareId): boolean {
  const [x, y] = [triple(a), triple(b)];
  for (let i = 0; i < 3; i++) {
    if (x[i] !== y[i]) return x[i] < y[i];
  }
  return true;
}

function sameId(a: ChareId, b: ChareId): boolean {
  return a.collection === b.collection && a.element === b.element && a.pe === b.pe;
}

export class BoundChannel {
  readonly worker: WireWorker;
  readonly channelId: number;
  readonly local: ChareId;
  readonly peer: ChareId;

  private sendDir: number;
  private sendCtr = 0;
  private recvCtr = 0;
  private limit: number;

  constructor(worker: WireWorker, channelId: number, local: ChareId, peer: ChareId) {
    const layout = worker.layout;
    if (channelId < 0 || channelId >= 2 ** layout.channelIdBits) {
      throw new ChannelError(`channel id ${channelId} outside ${layout.channelIdBits} bits`);
    }
    this.worker = worker;
    this.channelId = channelId;
    this.local = local;
    this.peer = peer;
    // self-channels keep direction 0 for both roles
    this.sendDir = lessOrEqual(local, peer) ? 0 : 1;
    this.limit = 2 ** (layout.channelCounterBits - 1);
  }

  private tag(direction: number, counter: number): bigint {
    if (counter >= this.limit) {
      throw new ChannelError(
        `channel ${this.channelId} exhausted its counter (${this.limit} transfers in one direction)`,
      );
    }
    return this.worker.layout.encodeChannel(this.channelId, direction, counter);
  }

  /**
   * Stream the next payload toward the peer; resolves when the source
   * buffer is reusable.
   */
  send(data: Buffer | DeviceBuffer | DeviceRegion, size?: number): Promise<Completion> {
    const tag = this.tag(this.sendDir, this.sendCtr);
    this.sendCtr += 1;
    return this.worker.tagSend(tag, data, size);
  }

  /** Post the receive for the peer's next payload into `sink`. */
  recv(sink: Buffer | DeviceBuffer | DeviceRegion, size?: number): Promise<Completion> {
    const recvDir = sameId(this.local, this.peer) ? this.sendDir : 1 - this.sendDir;
    const tag = this.tag(recvDir, this.recvCtr);
    this.recvCtr += 1;
    return this.worker.tagRecv(tag, { sink, size });
  }
}
