/**
 * Play endpoint A of a channel op schedule through the binding.
 *
 * The schedule format is the script server's: per-direction size lists
 * plus per-endpoint op lists [kind, k, space], k monotone per kind.
 * Returns {k, size, sha256} per receive, in issue order, which is also
 * completion order since a channel direction is an in-order stream.
 */

import { createHash } from 'node:crypto';

import { Binding, start } from './binding.js';
import { BoundChannel, chareId } from './channel.js';
import { DeviceBuffer } from './devicesim.js';
import { DIR_AB, DIR_BA, pattern } from './pattern.js';
import { Completion, OK } from './worker.js';

export type Op = [kind: 'send' | 'recv', k: number, space: 'host' | 'dev'];

export interface ChannelScript {
  channel_id: number;
  seed: number;
  eager_threshold?: number;
  sequential?: boolean;
  ab_sizes: number[];
  ba_sizes: number[];
  a_ops: Op[];
  b_ops: Op[];
}

export interface TranscriptRecord {
  k: number;
  size: number;
  sha256: string;
}

export const A_ID = chareId(0, 0, 0);
export const B_ID = chareId(0, 1, 1);

function sha256hex(data: Buffer): string {
  return createHash('sha256').update(data).digest('hex');
}

async function awaitOk(p: Promise<Completion>): Promise<Completion> {
  const comp = await p;
  if (comp.status !== OK) {
    throw new Error(`transfer failed: ${comp.status} ${comp.error ?? ''}`);
  }
  return comp;
}

interface SinkEntry {
  k: number;
  size: number;
  host?: Buffer;
  dev?: DeviceBuffer;
}

/** Run side A's ops on an open channel; the binding owns the device arena. */
export async function playSideA(binding: Binding, ch: BoundChannel, script: ChannelScript): Promise<TranscriptRecord[]> {
  const seed = script.seed;
  const sinks: SinkEntry[] = [];

  const issue = (op: Op): Promise<Completion> => {
    const [kind, k, space] = op;
    if (kind === 'send') {
      const data = pattern(seed, DIR_AB, k, script.ab_sizes[k]);
      if (space === 'dev') {
        const buf = binding.deviceAlloc(Math.max(data.length, 1));
        binding.hostToDevice(buf, data);
        return ch.send(buf, data.length);
      }
      return ch.send(data);
    }
    const n = script.ba_sizes[k];
    if (space === 'dev') {
      const sink = binding.deviceAlloc(Math.max(n, 1));
      sinks.push({ k, size: n, dev: sink });
      return ch.recv(sink, n);
    }
    const sink = Buffer.alloc(n);
    sinks.push({ k, size: n, host: sink });
    return ch.recv(sink);
  };

  if (script.sequential) {
    for (const op of script.a_ops) {
      await awaitOk(issue(op));
    }
  } else {
    // issue everything up front, then settle; cannot deadlock
    await Promise.all(script.a_ops.map(issue).map(awaitOk));
  }

  return sinks.map(({ k, size, host, dev }) => ({
    k,
    size,
    sha256: sha256hex(dev ? binding.deviceToHost(dev, size) : host!),
  }));
}

/** Connect to a script server and run the A side of `script` against it. */
export async function runScript(script: ChannelScript, port: number, host = '127.0.0.1'): Promise<TranscriptRecord[]> {
  const binding = await start({
    host,
    port,
    workerId: 0,
    eagerThreshold: script.eager_threshold ?? 8192,
  });
  try {
    const ch = binding.makeChannel(script.channel_id, B_ID, A_ID);
    return await playSideA(binding, ch, script);
  } finally {
    await binding.close();
  }
}
