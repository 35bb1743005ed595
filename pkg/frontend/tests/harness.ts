/**
 * Spawn helpers for the Python script server, the reference peer every
 * integration test talks to. `native` runs both endpoints in-process
 * and prints the reference transcripts; `serve` binds an ephemeral
 * port, prints READY <port>, plays endpoint B, then prints its
 * transcript.
 */

import { ChildProcess, spawn } from 'node:child_process';

import type { ChannelScript, TranscriptRecord } from '../src/script.js';

const PYTHON = process.env.PYTHON ?? 'python3';
const MODULE = ['-m', 'charmlet.chanserv'];

export interface Transcripts {
  a: TranscriptRecord[];
  b: TranscriptRecord[];
}

function lastJsonLine(stdout: string): unknown {
  const lines = stdout.trim().split('\n');
  return JSON.parse(lines[lines.length - 1]);
}

/** Reference transcripts: both endpoints in one Python process. */
export function nativeTranscripts(script: ChannelScript): Promise<Transcripts> {
  return new Promise((resolve, reject) => {
    const proc = spawn(PYTHON, [...MODULE, 'native', '--script', '-'], {
      stdio: ['pipe', 'pipe', 'pipe'],
    });
    let out = '';
    let err = '';
    proc.stdout.on('data', (d) => (out += d));
    proc.stderr.on('data', (d) => (err += d));
    proc.on('error', reject);
    proc.on('close', (code) => {
      if (code !== 0) {
        reject(new Error(`native run exited ${code}: ${err}`));
        return;
      }
      resolve(lastJsonLine(out) as Transcripts);
    });
    proc.stdin.write(JSON.stringify(script));
    proc.stdin.end();
  });
}

export interface ServerHandle {
  port: number;
  proc: ChildProcess;
  /** Wait for exit and return endpoint B's transcript. */
  finish(): Promise<TranscriptRecord[]>;
  kill(): void;
}

/** Start a server playing endpoint B; resolves once the port is known. */
export function spawnServer(script: ChannelScript, timeoutS = 30): Promise<ServerHandle> {
  return new Promise((resolve, reject) => {
    const proc = spawn(PYTHON, [...MODULE, 'serve', '--script', '-', '--timeout', String(timeoutS)], {
      stdio: ['pipe', 'pipe', 'pipe'],
    });
    let out = '';
    let err = '';
    let ready = false;
    const done = new Promise<TranscriptRecord[]>((resolveDone, rejectDone) => {
      proc.on('close', (code) => {
        if (code !== 0) {
          rejectDone(new Error(`server exited ${code}: ${err}`));
          return;
        }
        resolveDone((lastJsonLine(out) as { b: TranscriptRecord[] }).b);
      });
    });
    done.catch(() => {}); // settled via finish(); avoid unhandled-rejection noise
    proc.stderr.on('data', (d) => (err += d));
    proc.stdout.on('data', (d) => {
      out += d;
      if (!ready) {
        const m = out.match(/^READY (\d+)\n/);
        if (m) {
          ready = true;
          resolve({
            port: Number(m[1]),
            proc,
            finish: () => done,
            kill: () => proc.kill(),
          });
          out = out.slice(m[0].length);
        }
      }
    });
    proc.on('error', reject);
    proc.on('close', () => {
      if (!ready) reject(new Error(`server exited before READY: ${err}`));
    });
    proc.stdin.write(JSON.stringify(script));
    proc.stdin.end();
  });
}

/** Deterministic 32-bit PRNG for randomized test schedules. */
export function makeRng(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    // xorshift32
    s ^= s << 13;
    s >>>= 0;
    s ^= s >>> 17;
    s ^= s << 5;
    s >>>= 0;
    return s / 2 ** 32;
  };
}

export function randint(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

export function choice<T>(rng: () => number, items: readonly T[]): T {
  return items[Math.floor(rng() * items.length)];
}
