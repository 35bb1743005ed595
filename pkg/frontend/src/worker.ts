/**
 * One transport worker over a single TCP connection.
 *
 * Implements the client half of the tagged protocol: an 18-byte hello
 * each way pins the tag layout, then frames flow. Sends at or below the
 * eager threshold go in one frame and complete immediately; larger ones
 * announce themselves (RTS), park the payload per tag, and complete when
 * the peer's PULL is served. Receives post (tag, mask, capacity) requests
 * that match frames by `frame.tag & mask == tag & mask`, earliest posted
 * against earliest arrived; unmatched eager/RTS frames wait in an
 * unexpected queue. Payload frames bypass matching: they can only answer
 * a PULL this side already issued.
 */

import * as net from 'node:net';

import { DeviceBuffer, DeviceRegion, asRegion } from './devicesim.js';
import { FULL_MASK, TagLayout } from './tags.js';
import {
  FRAME_EAGER,
  FRAME_PAYLOAD,
  FRAME_PULL,
  FRAME_RTS,
  FRAME_HEADER_BYTES,
  HELLO_BYTES,
  WireError,
  bodyLength,
  encodeFrame,
  encodeHello,
  parseFrameHeader,
  parseHello,
} from './wire.js';

export const OK = 'ok';
export const TRUNCATED = 'truncated';
export const TRANSPORT_ERROR = 'transport-error';

export interface Completion {
  status: string;
  tag: bigint;
  length: number;
  /** Present on sink-less receives. */
  payload?: Buffer;
  error?: string;
}

export interface WorkerOptions {
  host?: string;
  port: number;
  workerId?: number;
  eagerThreshold?: number;
  maxMessageBytes?: number;
  layout?: TagLayout;
  connectTimeoutMs?: number;
}

interface Frame {
  kind: number;
  tag: bigint;
  length: number;
  payload?: Buffer;
  seq: number;
}

interface PostedRecv {
  tag: bigint;
  mask: bigint;
  capacity: number;
  sink?: Buffer | DeviceRegion;
  resolve: (c: Completion) => void;
}

interface PendingSend {
  tag: bigint;
  /** Host payloads snapshot at send time; device regions read at PULL service. */
  source: Buffer | DeviceRegion;
  nbytes: number;
  resolve: (c: Completion) => void;
}

type Sink = Buffer | DeviceBuffer | DeviceRegion;

function readSource(source: Buffer | DeviceRegion, nbytes: number): Buffer {
  if (Buffer.isBuffer(source)) return source;
  return Buffer.from(source.buffer.bytes.subarray(source.offset, source.offset + nbytes));
}

export class WireWorker {
  readonly id: number;
  readonly layout: TagLayout;
  readonly eagerThreshold: number;
  readonly maxMessageBytes: number;

  private socket!: net.Socket;
  private rbuf: Buffer = Buffer.alloc(0);
  private helloDone = false;
  private peerId = -1;
  private arrivalSeq = 0;

  private posted: PostedRecv[] = [];
  private unexpected: Frame[] = [];
  /** tag -> queued rendezvous sends awaiting the peer's PULL, FIFO. */
  private pendingRdv = new Map<bigint, PendingSend[]>();
  /** tag -> receive requests whose PULL went out, FIFO. */
  private pulled = new Map<bigint, PostedRecv[]>();

  private failure: string | null = null;
  private closed = false;

  constructor(opts: WorkerOptions) {
    this.id = opts.workerId ?? 0;
    this.layout = opts.layout ?? new TagLayout();
    this.eagerThreshold = opts.eagerThreshold ?? 8192;
    this.maxMessageBytes = opts.maxMessageBytes ?? 1 << 30;
  }

  /** Dial the peer and complete the hello exchange. */
  connect(opts: WorkerOptions): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host: opts.host ?? '127.0.0.1', port: opts.port });
      this.socket = socket;
      socket.setNoDelay(true);

      const timeout = setTimeout(() => {
        socket.destroy();
        reject(new WireError('connect timed out'));
      }, opts.connectTimeoutMs ?? 5000);

      socket.once('connect', () => {
        socket.write(encodeHello(this.layout.digest(), this.id));
      });
      socket.on('data', (chunk: Buffer) => {
        try {
          this.ingest(chunk);
        } catch (e) {
          this.fail((e as Error).message);
          if (!this.helloDone) {
            clearTimeout(timeout);
            reject(e);
          }
          socket.destroy();
          return;
        }
        if (this.helloDone) {
          clearTimeout(timeout);
          resolve();
        }
      });
      socket.on('error', (e) => {
        clearTimeout(timeout);
        this.fail(e.message);
        reject(e);
      });
      socket.on('close', () => {
        clearTimeout(timeout);
        if (!this.closed) {
          this.fail('peer closed the connection');
          reject(new WireError('connection closed during handshake'));
        }
      });
    });
  }

  get peer(): number {
    return this.peerId;
  }

  // ------------------------------------------------------------------ sends

  /**
   * Non-blocking tagged send; resolves once the source buffer is
   * reusable (immediately for eager, at PULL service for rendezvous).
   */
  tagSend(tag: bigint, payload: Buffer | DeviceBuffer | DeviceRegion, length?: number): Promise<Completion> {
    if (tag < 0n || tag > FULL_MASK) {
      throw new WireError(`tag 0x${tag.toString(16)} outside 64 bits`);
    }
    let source: Buffer | DeviceRegion;
    let nbytes: number;
    if (Buffer.isBuffer(payload)) {
      if (length !== undefined && length > payload.length) {
        throw new WireError(`length ${length} exceeds payload of ${payload.length}`);
      }
      source = length === undefined ? Buffer.from(payload) : Buffer.from(payload.subarray(0, length));
      nbytes = source.length;
    } else {
      source = asRegion(payload, length);
      nbytes = source.size;
    }
    if (nbytes > this.maxMessageBytes) {
      throw new WireError(`payload of ${nbytes} bytes exceeds max message size ${this.maxMessageBytes}`);
    }
    if (this.failure) {
      return Promise.resolve({ status: TRANSPORT_ERROR, tag, length: 0, error: this.failure });
    }
    if (nbytes <= this.eagerThreshold) {
      this.emit(FRAME_EAGER, tag, nbytes, readSource(source, nbytes));
      return Promise.resolve({ status: OK, tag, length: nbytes });
    }
    this.emit(FRAME_RTS, tag, nbytes);
    return new Promise((resolve) => {
      let q = this.pendingRdv.get(tag);
      if (!q) {
        q = [];
        this.pendingRdv.set(tag, q);
      }
      q.push({ tag, source, nbytes, resolve });
    });
  }

  // --------------------------------------------------------------- receives

  /** Post a tagged receive; matches queued unexpected frames first. */
  tagRecv(tag: bigint, opts: { mask?: bigint; capacity?: number; sink?: Sink; size?: number } = {}): Promise<Completion> {
    const mask = opts.mask ?? FULL_MASK;
    let sink: Buffer | DeviceRegion | undefined;
    let capacity: number;
    if (opts.sink === undefined) {
      sink = undefined;
      capacity = opts.capacity ?? 0;
    } else if (Buffer.isBuffer(opts.sink)) {
      sink = opts.sink;
      capacity = opts.size ?? opts.sink.length;
    } else {
      const r = asRegion(opts.sink, opts.size);
      sink = r;
      capacity = r.size;
    }
    return new Promise((resolve) => {
      const req: PostedRecv = { tag, mask, capacity, sink, resolve };
      // frames that already arrived stay deliverable even after the
      // peer disconnects; only an unmatched post is doomed then
      for (let i = 0; i < this.unexpected.length; i++) {
        const frame = this.unexpected[i];
        if ((frame.tag & mask) === (tag & mask)) {
          this.unexpected.splice(i, 1);
          this.absorb(req, frame);
          return;
        }
      }
      if (this.failure) {
        resolve({ status: TRANSPORT_ERROR, tag, length: 0, error: this.failure });
        return;
      }
      this.posted.push(req);
    });
  }

  /** (tag, length) of the earliest matching unexpected frame, if any. */
  tagProbe(tag: bigint, mask: bigint = FULL_MASK): { tag: bigint; length: number } | null {
    for (const frame of this.unexpected) {
      if ((frame.tag & mask) === (tag & mask)) {
        return { tag: frame.tag, length: frame.length };
      }
    }
    return null;
  }

  // ------------------------------------------------------------ frame input

  private ingest(chunk: Buffer): void {
    this.rbuf = this.rbuf.length ? Buffer.concat([this.rbuf, chunk]) : chunk;
    if (!this.helloDone) {
      if (this.rbuf.length < HELLO_BYTES) return;
      const hello = parseHello(this.rbuf.subarray(0, HELLO_BYTES));
      const ours = this.layout.digest();
      if (hello.digest !== ours) {
        throw new WireError(
          `tag layout mismatch: ours ${ours.toString(16)}, peer ${hello.digest.toString(16)}`,
        );
      }
      this.peerId = hello.workerId;
      this.helloDone = true;
      this.rbuf = this.rbuf.subarray(HELLO_BYTES);
    }
    let offset = 0;
    while (this.rbuf.length - offset >= FRAME_HEADER_BYTES) {
      const header = parseFrameHeader(this.rbuf, offset);
      const body = bodyLength(header);
      if (this.rbuf.length - offset - FRAME_HEADER_BYTES < body) break;
      const start = offset + FRAME_HEADER_BYTES;
      const frame: Frame = {
        kind: header.kind,
        tag: header.tag,
        length: header.length,
        payload: body ? Buffer.from(this.rbuf.subarray(start, start + body)) : undefined,
        seq: this.arrivalSeq++,
      };
      offset = start + body;
      this.arrived(frame);
    }
    this.rbuf = this.rbuf.subarray(offset);
  }

  private arrived(frame: Frame): void {
    if (frame.kind === FRAME_PULL) {
      this.servePull(frame);
      return;
    }
    if (frame.kind === FRAME_PAYLOAD) {
      const q = this.pulled.get(frame.tag);
      if (!q || q.length === 0) {
        throw new WireError(`payload with no pending pull: tag 0x${frame.tag.toString(16)}`);
      }
      const req = q.shift()!;
      if (q.length === 0) this.pulled.delete(frame.tag);
      this.absorb(req, frame);
      return;
    }
    // eager or rts: run the matching engine
    for (let i = 0; i < this.posted.length; i++) {
      const req = this.posted[i];
      if ((frame.tag & req.mask) === (req.tag & req.mask)) {
        this.posted.splice(i, 1);
        this.absorb(req, frame);
        return;
      }
    }
    this.unexpected.push(frame);
  }

  private absorb(req: PostedRecv, frame: Frame): void {
    if (frame.kind === FRAME_RTS) {
      if (this.failure) {
        // the announced payload can never be pulled from a dead peer
        req.resolve({ status: TRANSPORT_ERROR, tag: frame.tag, length: 0, error: this.failure });
        return;
      }
      // anchor the request and ask the sender for the payload
      let q = this.pulled.get(frame.tag);
      if (!q) {
        q = [];
        this.pulled.set(frame.tag, q);
      }
      q.push(req);
      this.emit(FRAME_PULL, frame.tag, 0);
      return;
    }
    if (frame.length > req.capacity) {
      req.resolve({
        status: TRUNCATED,
        tag: frame.tag,
        length: frame.length,
        error: `frame of ${frame.length} bytes exceeds capacity ${req.capacity}`,
      });
      return;
    }
    const payload = frame.payload ?? Buffer.alloc(0);
    let out: Buffer | undefined;
    if (req.sink === undefined) {
      out = payload;
    } else if (Buffer.isBuffer(req.sink)) {
      payload.copy(req.sink, 0);
    } else {
      payload.copy(req.sink.buffer.bytes, req.sink.offset);
    }
    req.resolve({ status: OK, tag: frame.tag, length: frame.length, payload: out });
  }

  private servePull(frame: Frame): void {
    const q = this.pendingRdv.get(frame.tag);
    if (!q || q.length === 0) {
      throw new WireError(`pull for unknown rendezvous: tag 0x${frame.tag.toString(16)}`);
    }
    const pending = q.shift()!;
    if (q.length === 0) this.pendingRdv.delete(frame.tag);
    this.emit(FRAME_PAYLOAD, pending.tag, pending.nbytes, readSource(pending.source, pending.nbytes));
    pending.resolve({ status: OK, tag: pending.tag, length: pending.nbytes });
  }

  private emit(kind: number, tag: bigint, length: number, body?: Buffer): void {
    if (this.closed || this.failure) {
      throw new WireError(this.failure ?? 'worker is closed');
    }
    this.socket.write(encodeFrame(kind, tag, length, body));
  }

  // ----------------------------------------------------------------- teardown

  private fail(reason: string): void {
    if (this.failure) return;
    this.failure = reason;
    const flush = (resolve: (c: Completion) => void, tag: bigint) =>
      resolve({ status: TRANSPORT_ERROR, tag, length: 0, error: reason });
    for (const req of this.posted) flush(req.resolve, req.tag);
    this.posted = [];
    for (const q of this.pulled.values()) for (const req of q) flush(req.resolve, req.tag);
    this.pulled.clear();
    for (const q of this.pendingRdv.values()) for (const p of q) flush(p.resolve, p.tag);
    this.pendingRdv.clear();
  }

  /**
   * Flush buffered outbound bytes and close. A rendezvous send resolves
   * when its payload is written toward the socket, so the peer may still
   * be owed bytes when the last local completion fires; ending the
   * socket queues the FIN behind them.
   */
  close(): Promise<void> {
    if (this.closed || !this.socket) {
      this.closed = true;
      return Promise.resolve();
    }
    this.closed = true;
    return new Promise((resolve) => {
      this.socket.end(() => resolve());
      this.socket.once('close', () => resolve());
    });
  }
}
