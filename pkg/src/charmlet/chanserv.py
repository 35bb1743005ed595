"""Channel script server: run one endpoint of a scripted schedule.

Lets an out-of-process peer exercise the channel machinery through the
TCP wire format alone, with no runtime linkage: ``serve`` binds an
ephemeral port, prints ``READY <port>``, waits for transport worker 0 to
connect, and plays endpoint B of the script; ``native`` plays both
endpoints in-process over loopback. Both modes print a JSON transcript
of every completed receive, so a foreign client can check that driving
the wire itself produces exactly what the core produces.

A script is a JSON object:

    {
      "channel_id": 7,
      "eager_threshold": 2048,
      "seed": 123,
      "sequential": false,
      "ab_sizes": [300, 9000],
      "ba_sizes": [16],
      "a_ops": [["send", 0, "host"], ["recv", 0, "dev"]],
      "b_ops": [["recv", 0, "host"], ["recv", 1, "host"], ["send", 0, "host"]]
    }

Endpoint A is chare (collection 0, element 0) on PE 0 and endpoint B is
(0, 1) on PE 1; the fixed identities pin the channel's direction
assignment on both sides of the wire. An op is [kind, k, space] where k
is the per-direction transfer index: within one endpoint the kth send
carries pattern(seed, direction, k) of the direction's kth size, and
ops must issue in increasing k per kind because the channel counters
pair that way. ``sequential`` makes the endpoint await each op before
issuing the next (issue-all-then-await otherwise, which cannot
deadlock). The transcript lists {k, size, sha256} per receive in
completion order.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from .channels import Channel
from .completion import OK, ChareId
from .config import RuntimeConfig
from .runtime import Chare, Runtime, entry
from .transport import TransportGroup

A_ID = ChareId(0, 0, 0)
B_ID = ChareId(0, 1, 1)

DIR_AB = 0
DIR_BA = 1


class ScriptError(ValueError):
    pass


def pattern(seed: int, direction: int, k: int, size: int) -> bytes:
    """Deterministic payload for the kth transfer of a direction.

    byte[i] = (a + b*i) mod 256 with a, b mixed from (seed, direction,
    k) and b odd, so the bytes cycle through every residue. Simple
    enough to regenerate exactly in any client language.
    """
    h = (seed * 2654435761 + direction * 40503 + k * 69069 + 1) & 0xFFFFFFFF
    a = h & 0xFF
    b = ((h >> 8) & 0xFF) | 1
    if size == 0:
        return b""
    i = np.arange(size, dtype=np.uint32)
    return ((a + b * i) & 0xFF).astype(np.uint8).tobytes()


def validate_script(script: dict) -> dict:
    for key in ("channel_id", "seed", "ab_sizes", "ba_sizes", "a_ops", "b_ops"):
        if key not in script:
            raise ScriptError(f"script missing {key!r}")
    for side, out_key in (("a_ops", "ab_sizes"), ("b_ops", "ba_sizes")):
        in_key = "ba_sizes" if out_key == "ab_sizes" else "ab_sizes"
        counts = {"send": 0, "recv": 0}
        for op in script[side]:
            if len(op) != 3 or op[0] not in counts or op[2] not in ("host", "dev"):
                raise ScriptError(f"bad op {op!r} in {side}")
            kind, k, _ = op
            if k != counts[kind]:
                raise ScriptError(f"{side}: {kind} index {k} out of order")
            counts[kind] += 1
        if counts["send"] != len(script[out_key]):
            raise ScriptError(f"{side}: {counts['send']} sends for "
                              f"{len(script[out_key])} {out_key}")
        if counts["recv"] != len(script[in_key]):
            raise ScriptError(f"{side}: {counts['recv']} recvs for "
                              f"{len(script[in_key])} {in_key}")
    return script


class _ScriptPe:
    """Just enough PE surface for a Channel endpoint outside the runtime."""

    def __init__(self, worker):
        self.worker = worker
        self.index = worker.id
        self.channel_ids = set()


def _wait(worker, fut, timeout_s: float = 30.0):
    deadline = time.monotonic() + timeout_s
    while not fut.done:
        if worker.progress() == 0:
            time.sleep(0.0002)
        if time.monotonic() > deadline:
            raise TimeoutError("script op did not complete within "
                               f"{timeout_s:.0f}s")
    comp = fut.value
    if comp.status != OK:
        raise RuntimeError(f"transfer failed: {comp.status} {comp.error or ''}")
    return comp


def _drain(worker, timeout_s: float = 10.0) -> None:
    """Flush buffered outbound bytes so closing drops no frames.

    A rendezvous send completes when its payload is emitted, which on
    TCP means appended to the connection's write buffer; an endpoint
    that closes right after its last completion could strand the
    payload its peer is still waiting for.
    """
    deadline = time.monotonic() + timeout_s
    while any(not c.closed and c.wbuf for c in worker._conns):
        worker.progress()
        if time.monotonic() > deadline:
            raise TimeoutError("could not flush outbound frames")
        time.sleep(0.0002)


def _run_endpoint(ch: Channel, dev, worker, script: dict, side: str) -> list[dict]:
    seed = script["seed"]
    out_dir = DIR_AB if side == "a" else DIR_BA
    out_sizes = script["ab_sizes"] if side == "a" else script["ba_sizes"]
    in_sizes = script["ba_sizes"] if side == "a" else script["ab_sizes"]
    ops = script["a_ops"] if side == "a" else script["b_ops"]
    recv_order: list[int] = []
    sinks: dict[int, tuple] = {}

    def issue(kind, k, space):
        if kind == "send":
            data = pattern(seed, out_dir, k, out_sizes[k])
            if space == "dev":
                buf = dev.alloc(worker.id, max(len(data), 1))
                dev.host_to_device(buf, data)
                return ch.send(buf, size=len(data))
            return ch.send(data)
        n = in_sizes[k]
        if space == "dev":
            sink = dev.alloc(worker.id, max(n, 1))
            fut = ch.recv(sink, size=n)
        else:
            sink = bytearray(n)
            fut = ch.recv(sink)
        sinks[k] = (space, sink, n)
        recv_order.append(k)
        return fut

    if script.get("sequential"):
        for op in ops:
            _wait(worker, issue(*op))
    else:
        for fut in [issue(*op) for op in ops]:
            _wait(worker, fut)

    out = []
    for k in recv_order:
        space, sink, n = sinks[k]
        if space == "dev":
            data = dev.device_to_host(sink, size=n) if n else b""
        else:
            data = bytes(sink)
        out.append({"k": k, "size": n, "sha256": hashlib.sha256(data).hexdigest()})
    return out


def _wire_config(script: dict, **kw) -> RuntimeConfig:
    return RuntimeConfig(
        workers=2,
        time_mode="wall",
        eager_threshold=int(script.get("eager_threshold", 8192)),
        **kw,
    )


def run_server(script: dict, out=None, timeout_s: float = 60.0) -> dict:
    """Bind a port, announce it, and play endpoint B against worker 0."""
    out = out or sys.stdout
    group = TransportGroup(_wire_config(script), backend="tcp")
    w = group.create_worker(1, listen="127.0.0.1:0")
    try:
        print(f"READY {w.listen_port}", file=out, flush=True)
        deadline = time.monotonic() + timeout_s
        while 0 not in w.endpoints:
            if w.progress() == 0:
                time.sleep(0.0005)
            if time.monotonic() > deadline:
                raise TimeoutError("no peer connected")
        ch = Channel(_ScriptPe(w), script["channel_id"], B_ID, A_ID)
        transcript = {"b": _run_endpoint(ch, group.device_space, w, script, "b")}
        _drain(w)
        print(json.dumps(transcript), file=out, flush=True)
        return transcript
    finally:
        group.close()


def run_client(script: dict, port: int) -> dict:
    """Drive endpoint A over TCP; the reference client for bindings."""
    cfg = _wire_config(script, addresses={1: f"127.0.0.1:{port}"})
    group = TransportGroup(cfg, backend="tcp")
    w = group.create_worker(0)
    w.connect(1)
    try:
        ch = Channel(_ScriptPe(w), script["channel_id"], A_ID, B_ID)
        transcript = {"a": _run_endpoint(ch, group.device_space, w, script, "a")}
        _drain(w)
        return transcript
    finally:
        group.close()


class _ScriptEnd(Chare):
    def __init__(self):
        self.records = None

    @entry
    def run_script(self, script_json, side, peer):
        # the script rides the launch envelope as text: entry argument
        # serialization carries scalars and buffers, not mappings
        script = json.loads(script_json)
        ch = self.channel(script["channel_id"], peer)
        dev = self.runtime.device
        seed = script["seed"]
        out_dir = DIR_AB if side == "a" else DIR_BA
        out_sizes = script["ab_sizes"] if side == "a" else script["ba_sizes"]
        in_sizes = script["ba_sizes"] if side == "a" else script["ab_sizes"]
        ops = script["a_ops"] if side == "a" else script["b_ops"]
        recv_order, sinks = [], {}

        def issue(kind, k, space):
            if kind == "send":
                data = pattern(seed, out_dir, k, out_sizes[k])
                if space == "dev":
                    buf = self.device_alloc(max(len(data), 1))
                    dev.host_to_device(buf, data)
                    return ch.send(buf, size=len(data))
                return ch.send(data)
            n = in_sizes[k]
            if space == "dev":
                sink = self.device_alloc(max(n, 1))
                fut = ch.recv(sink, size=n)
            else:
                sink = bytearray(n)
                fut = ch.recv(sink)
            sinks[k] = (space, sink, n)
            recv_order.append(k)
            return fut

        if script.get("sequential"):
            for op in ops:
                comp = yield issue(*op)
                assert comp.status == OK, comp
        else:
            for fut in [issue(*op) for op in ops]:
                comp = yield fut
                assert comp.status == OK, comp

        records = []
        for k in recv_order:
            space, sink, n = sinks[k]
            if space == "dev":
                data = dev.device_to_host(sink, size=n) if n else b""
            else:
                data = bytes(sink)
            records.append({"k": k, "size": n,
                            "sha256": hashlib.sha256(data).hexdigest()})
        self.records = records


def run_native(script: dict) -> dict:
    """Play both endpoints in-process; the reference transcript."""
    cfg = RuntimeConfig(workers=2, time_mode="virtual",
                        eager_threshold=int(script.get("eager_threshold", 8192)))
    rt = Runtime(cfg)
    rt.register(_ScriptEnd)
    ids = rt.create(_ScriptEnd, 2, placement=[0, 1])
    assert ids[0] == A_ID and ids[1] == B_ID, "endpoint identities drifted"
    text = json.dumps(script)
    rt.launch(ids[0], "run_script", text, "a", ids[1])
    rt.launch(ids[1], "run_script", text, "b", ids[0])
    rt.run()
    a = rt.pe(0).chares[(0, 0)].records
    b = rt.pe(1).chares[(0, 1)].records
    rt.close()
    assert a is not None and b is not None, "script did not finish"
    return {"a": a, "b": b}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="charmlet-chanserv",
        description="run a channel script natively or as a TCP endpoint",
    )
    parser.add_argument("mode", choices=("native", "serve"))
    parser.add_argument("--script", default="-",
                        help="script JSON path, or - for stdin (default)")
    parser.add_argument("--timeout", type=float, default=60.0,
                        help="serve mode: seconds to wait for the peer")
    args = parser.parse_args(argv)
    try:
        if args.script == "-":
            script = json.load(sys.stdin)
        else:
            with open(args.script) as f:
                script = json.load(f)
        validate_script(script)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.mode == "native":
        print(json.dumps(run_native(script)))
        return 0
    try:
        run_server(script, timeout_s=args.timeout)
    except (TimeoutError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
