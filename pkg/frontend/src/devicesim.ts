/**
 * Local device-memory stand-in for the binding process.
 *
 * Allocations return opaque handles; payload bytes only move through
 * the explicit copy calls, which charge a latency + size/bandwidth cost
 * to an accumulating clock (nanoseconds). On-device moves are free, as
 * they model kernel work rather than interconnect traffic.
 */

export class DeviceError extends Error {}

export interface CopyCostSpec {
  h2dLatencyUs?: number;
  h2dBandwidth?: number; // bytes per second
  d2hLatencyUs?: number;
  d2hBandwidth?: number;
}

export class CopyCostModel {
  readonly h2dLatencyUs: number;
  readonly h2dBandwidth: number;
  readonly d2hLatencyUs: number;
  readonly d2hBandwidth: number;

  constructor(spec: CopyCostSpec = {}) {
    this.h2dLatencyUs = spec.h2dLatencyUs ?? 5.0;
    this.h2dBandwidth = spec.h2dBandwidth ?? 10e9;
    this.d2hLatencyUs = spec.d2hLatencyUs ?? 5.0;
    this.d2hBandwidth = spec.d2hBandwidth ?? 10e9;
  }

  h2dNs(nbytes: number): number {
    return Math.round(this.h2dLatencyUs * 1000.0) + Math.round((nbytes * 1e9) / this.h2dBandwidth);
  }

  d2hNs(nbytes: number): number {
    return Math.round(this.d2hLatencyUs * 1000.0) + Math.round((nbytes * 1e9) / this.d2hBandwidth);
  }
}

let nextBufferId = 1;

export class DeviceBuffer {
  readonly id: number;
  readonly size: number;
  /** Backing storage; real code never touches it except via copies. */
  readonly bytes: Buffer;
  freed = false;

  constructor(size: number) {
    this.id = nextBufferId++;
    this.size = size;
    this.bytes = Buffer.alloc(size);
  }
}

export interface DeviceRegion {
  buffer: DeviceBuffer;
  offset: number;
  size: number;
}

export function region(buffer: DeviceBuffer, offset = 0, size?: number): DeviceRegion {
  const n = size ?? buffer.size - offset;
  if (offset < 0 || n < 0 || offset + n > buffer.size) {
    throw new DeviceError(`region [${offset}, ${offset + n}) outside ${buffer.size}-byte buffer`);
  }
  return { buffer, offset, size: n };
}

export function asRegion(target: DeviceBuffer | DeviceRegion, size?: number): DeviceRegion {
  if (target instanceof DeviceBuffer) {
    return region(target, 0, size);
  }
  if (size !== undefined && size > target.size) {
    throw new DeviceError(`size ${size} exceeds ${target.size}-byte region`);
  }
  return size === undefined ? target : { ...target, size };
}

export class DeviceArena {
  readonly cost: CopyCostModel;
  readonly capacity: number;
  used = 0;
  /** Accumulated copy cost, ns. */
  clockNs = 0;

  constructor(cost: CopyCostModel = new CopyCostModel(), capacity = 4 * 2 ** 30) {
    this.cost = cost;
    this.capacity = capacity;
  }

  alloc(size: number): DeviceBuffer {
    if (size <= 0) {
      throw new DeviceError(`allocation size must be positive, got ${size}`);
    }
    if (this.used + size > this.capacity) {
      throw new DeviceError(`device arena exhausted: ${this.used} + ${size} > ${this.capacity}`);
    }
    this.used += size;
    return new DeviceBuffer(size);
  }

  free(buf: DeviceBuffer): void {
    if (buf.freed) {
      throw new DeviceError(`double free of device buffer ${buf.id}`);
    }
    buf.freed = true;
    this.used -= buf.size;
  }

  /** Copy host bytes into a device region. Returns the charged ns. */
  hostToDevice(dst: DeviceBuffer | DeviceRegion, data: Buffer, size?: number): number {
    const n = size ?? data.length;
    if (n !== data.length) {
      throw new DeviceError(`host data is ${data.length} bytes, size argument ${n}`);
    }
    const r = asRegion(dst);
    if (n > r.size) {
      throw new DeviceError(`copy of ${n} bytes into ${r.size}-byte region`);
    }
    data.copy(r.buffer.bytes, r.offset);
    const ns = this.cost.h2dNs(n);
    this.clockNs += ns;
    return ns;
  }

  /** Copy a device region out to fresh host bytes. */
  deviceToHost(src: DeviceBuffer | DeviceRegion, size?: number): Buffer {
    const r = asRegion(src, size);
    const out = Buffer.alloc(r.size);
    r.buffer.bytes.copy(out, 0, r.offset, r.offset + r.size);
    this.clockNs += this.cost.d2hNs(r.size);
    return out;
  }

  /** On-device move (pack/unpack kernel); no copy charge. */
  deviceToDevice(dst: DeviceBuffer | DeviceRegion, src: DeviceBuffer | DeviceRegion, size?: number): void {
    const s = asRegion(src, size);
    const d = asRegion(dst, size ?? s.size);
    if (d.size < s.size) {
      throw new DeviceError(`copy of ${s.size} bytes into ${d.size}-byte region`);
    }
    s.buffer.bytes.copy(d.buffer.bytes, d.offset, s.offset, s.offset + s.size);
  }
}
