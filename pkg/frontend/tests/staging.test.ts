/**
 * The two ways to move device-resident data through a channel: hand the
 * device buffer straight to send/recv, or stage it through host copies
 * on both ends. Same bytes either way; that equivalence is the point of
 * exposing the copy helpers.
 */

import { describe, expect, it } from 'vitest';

import { start } from '../src/binding.js';
import { DIR_AB, DIR_BA, pattern } from '../src/pattern.js';
import type { ChannelScript } from '../src/script.js';
import { A_ID, B_ID } from '../src/script.js';
import { OK } from '../src/worker.js';
import { spawnServer } from './harness.js';

const N = 8192;

// payload big enough to take the rendezvous path at this threshold
const ECHO: ChannelScript = {
  channel_id: 5,
  eager_threshold: 2048,
  seed: 99,
  sequential: true,
  ab_sizes: [N],
  ba_sizes: [N],
  a_ops: [['send', 0, 'host'], ['recv', 0, 'host']],
  b_ops: [['recv', 0, 'host'], ['send', 0, 'host']],
};

/**
 * One ping-pong with the payload born in device memory; returns the
 * received device bytes. `staged` routes both transfers through host
 * staging buffers; otherwise device handles go straight to the channel.
 */
async function pingBranch(port: number, staged: boolean): Promise<Buffer> {
  const binding = await start({ port, eagerThreshold: 2048 });
  try {
    const ch = binding.makeChannel(ECHO.channel_id, B_ID, A_ID);
    const dSend = binding.deviceAlloc(N);
    const dRecv = binding.deviceAlloc(N);
    binding.hostToDevice(dSend, pattern(99, DIR_AB, 0, N));

    if (staged) {
      const hSend = binding.deviceToHost(dSend);
      expect((await ch.send(hSend)).status).toBe(OK);
      const hRecv = Buffer.alloc(N);
      expect((await ch.recv(hRecv)).status).toBe(OK);
      binding.hostToDevice(dRecv, hRecv);
    } else {
      expect((await ch.send(dSend, N)).status).toBe(OK);
      expect((await ch.recv(dRecv, N)).status).toBe(OK);
    }
    return binding.deviceToHost(dRecv);
  } finally {
    await binding.close();
  }
}

describe('direct vs host-staged device transfers', () => {
  it('both branches deliver identical bytes', async () => {
    const results: Buffer[] = [];
    for (const staged of [false, true]) {
      const server = await spawnServer(ECHO);
      results.push(await pingBranch(server.port, staged));
      await server.finish();
    }
    const [direct, staged] = results;
    expect(direct.equals(staged)).toBe(true);
    expect(direct.equals(pattern(99, DIR_BA, 0, N))).toBe(true);
  });
});
