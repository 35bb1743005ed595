/**
 * The binding surface: connect to a runtime worker, open channels, and
 * move bytes between host and (simulated) device memory.
 *
 * A Binding is one remote PE's peer: it owns a wire worker speaking the
 * framed tag protocol and a local device arena whose handles can be
 * passed straight to channel send/recv.
 */

import { BoundChannel, ChareId, chareId } from './channel.js';
import { CopyCostModel, DeviceArena, DeviceBuffer, DeviceRegion } from './devicesim.js';
import { TagLayout, TagLayoutSpec } from './tags.js';
import { WireWorker } from './worker.js';

export interface BindingConfig {
  host?: string;
  port: number;
  /** This side's worker id; the server keys its endpoint on it. */
  workerId?: number;
  eagerThreshold?: number;
  maxMessageBytes?: number;
  tagLayout?: TagLayoutSpec;
  connectTimeoutMs?: number;
  deviceCapacity?: number;
}

export class Binding {
  readonly worker: WireWorker;
  readonly arena: DeviceArena;
  /** Identity channel endpoints default to; element/pe track the worker id. */
  readonly selfId: ChareId;
  private channelKeys = new Set<string>();

  constructor(worker: WireWorker, arena: DeviceArena) {
    this.worker = worker;
    this.arena = arena;
    this.selfId = chareId(0, worker.id, worker.id);
  }

  /**
   * Open a channel to `peer`. Both sides must use the same id; the
   * remote endpoint is the peer chare's identity (collection, element,
   * PE), which fixes the direction assignment on both ends.
   */
  makeChannel(channelId: number, peer: ChareId, local?: ChareId): BoundChannel {
    const me = local ?? this.selfId;
    const key = `${channelId}:${me.collection}:${me.element}`;
    if (this.channelKeys.has(key)) {
      throw new Error(`channel id ${channelId} already open for this endpoint`);
    }
    this.channelKeys.add(key);
    return new BoundChannel(this.worker, channelId, me, peer);
  }

  deviceAlloc(size: number): DeviceBuffer {
    return this.arena.alloc(size);
  }

  deviceFree(buf: DeviceBuffer): void {
    this.arena.free(buf);
  }

  hostToDevice(dst: DeviceBuffer | DeviceRegion, data: Buffer, size?: number): number {
    return this.arena.hostToDevice(dst, data, size);
  }

  deviceToHost(src: DeviceBuffer | DeviceRegion, size?: number): Buffer {
    return this.arena.deviceToHost(src, size);
  }

  /** Drain outbound frames and disconnect. */
  close(): Promise<void> {
    return this.worker.close();
  }
}

/** Dial a worker and complete the handshake. */
export async function start(config: BindingConfig): Promise<Binding> {
  const worker = new WireWorker({
    host: config.host,
    port: config.port,
    workerId: config.workerId ?? 0,
    eagerThreshold: config.eagerThreshold,
    maxMessageBytes: config.maxMessageBytes,
    layout: config.tagLayout ? new TagLayout(config.tagLayout) : undefined,
  });
  await worker.connect({ port: config.port, host: config.host, connectTimeoutMs: config.connectTimeoutMs });
  const arena = new DeviceArena(new CopyCostModel(), config.deviceCapacity);
  return new Binding(worker, arena);
}
