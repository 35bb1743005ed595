"""Point-to-point microbenchmarks: latency and windowed bandwidth.

Three APIs (charm-messaging, charm-channel, mpi) crossed with two memory
modes. In device mode the transport reads and writes device buffers
directly. In host mode the payload is staged: copied to host on the
sender, shipped as ordinary bytes, copied back to device on the
receiver. Latency runs stage per message; bandwidth runs stage the whole
window first, then send, then unstage, which is what makes staging a
bandwidth bottleneck rather than a pipeline.

Timing is read from PE 0's clock, so in virtual mode the numbers are
exact consequences of the configured link and copy models. Payload
integrity is checked on the first (warmup) and final iterations.
"""

from __future__ import annotations

import argparse
import csv
import sys

from .completion import OK
from .config import VIRTUAL, WALL, RuntimeConfig, load_config
from .mpi import mpi_run, rank_result
from .runtime import Chare, DeviceArg, Runtime, entry

APIS = ("charm-messaging", "charm-channel", "mpi")
MODES = ("device", "host")

DEFAULT_LATENCY_ITERS = 20
DEFAULT_BW_ITERS = 3
DEFAULT_WARMUP = 2
DEFAULT_WINDOW = 64


def _pattern(size: int) -> bytes:
    return bytes((11 * i + size) & 0xFF for i in range(size))


class BenchError(RuntimeError):
    pass


# --------------------------------------------------------------- messaging

class _MsgPeer(Chare):
    """Both ends of the messaging ping-pong / window benchmark."""

    def __init__(self):
        self.sbuf = None
        self.rbuf = None
        self.hstash = []  # host-staged payloads parked until the window ends
        self._pending = None
        self.t0 = self.t1 = None
        self.verified = True

    def _dest(self, size: int):
        if self.rbuf is None or self.rbuf.size < size:
            self.rbuf = self.device_alloc(size)
        return self.rbuf

    # ---- device-direct ping-pong

    def post_take(self, src, op, echo):
        op.bind(self._dest(op.size), size=op.size)

    @entry
    def take(self, src, region, echo):
        if echo:
            self.proxy(src).take(self.id, DeviceArg(region), False)
        else:
            self._pending.complete(None)

    # ---- host-staged ping-pong (stage per message)

    @entry
    def take_host(self, src, data, echo):
        dev = self.runtime.device
        dst = self._dest(len(data))
        dev.host_to_device(dst, data, size=len(data))
        if echo:
            out = dev.device_to_host(dst, size=len(data))
            self.proxy(src).take_host(self.id, out, False)
        else:
            self._pending.complete(None)

    # ---- device-direct window

    def post_sink(self, src, op, last):
        op.bind(self._dest(op.size), size=op.size)

    @entry
    def sink(self, src, region, last):
        if last:
            self.proxy(src).ack()

    # ---- host-staged window (phased: unstage only after the whole window)

    @entry
    def sink_host(self, src, data, last):
        self.hstash.append(data)
        if last:
            dev = self.runtime.device
            dst = self._dest(len(data))
            for blob in self.hstash:
                dev.host_to_device(dst, blob, size=len(blob))
            self.hstash.clear()
            self.proxy(src).ack()

    @entry
    def ack(self):
        self._pending.complete(None)

    # ---- drivers (run on the sending element)

    @entry
    def run_latency(self, peer, size, iters, warmup, mode):
        dev = self.runtime.device
        self.sbuf = self.device_alloc(size)
        dev.host_to_device(self.sbuf, _pattern(size))
        p = self.proxy(peer)
        for k in range(warmup + iters):
            if k == warmup:
                self.t0 = self.now
            self._pending = self.future()
            if mode == "device":
                p.take(self.id, DeviceArg(self.sbuf, size), True)
            else:
                data = dev.device_to_host(self.sbuf, size=size)
                p.take_host(self.id, data, True)
            yield self._pending
            if k == 0:
                self._check_echo(size)  # warmup turn, charges stay untimed
        self.t1 = self.now
        self._check_echo(size)

    @entry
    def run_bw(self, peer, size, window, iters, warmup, mode):
        dev = self.runtime.device
        self.sbuf = self.device_alloc(size)
        dev.host_to_device(self.sbuf, _pattern(size))
        p = self.proxy(peer)
        for it in range(warmup + iters):
            if it == warmup:
                self.t0 = self.now
            self._pending = self.future()
            if mode == "device":
                for w in range(window):
                    p.sink(self.id, DeviceArg(self.sbuf, size), w == window - 1)
            else:
                staged = [dev.device_to_host(self.sbuf, size=size) for _ in range(window)]
                for w, blob in enumerate(staged):
                    p.sink_host(self.id, blob, w == window - 1)
            yield self._pending
        self.t1 = self.now

    def _check_echo(self, size):
        got = self.runtime.device.device_to_host(self.rbuf, size=size)
        if got != _pattern(size):
            self.verified = False


# ---------------------------------------------------------------- channels

class _ChanPeer(Chare):
    def __init__(self):
        self.t0 = self.t1 = None
        self.verified = True

    @entry
    def run_latency(self, cid, peer, size, iters, warmup, mode, leader):
        dev = self.runtime.device
        ch = self.channel(cid, peer)
        sbuf = self.device_alloc(size)
        rbuf = self.device_alloc(size)
        dev.host_to_device(sbuf, _pattern(size))
        for k in range(warmup + iters):
            if leader:
                if k == warmup:
                    self.t0 = self.now
                yield self._one_way_send(ch, sbuf, size, mode)
                yield self._one_way_recv(ch, rbuf, size, mode)
            else:
                yield self._one_way_recv(ch, rbuf, size, mode)
                yield self._one_way_send(ch, rbuf, size, mode)  # echo back
            if k == 0:
                got = dev.device_to_host(rbuf, size=size)
                if got != _pattern(size):
                    self.verified = False
        if leader:
            self.t1 = self.now
        got = dev.device_to_host(rbuf, size=size)
        if got != _pattern(size):
            self.verified = False

    def _one_way_send(self, ch, buf, size, mode):
        if mode == "device":
            return ch.send(buf, size=size)
        data = self.runtime.device.device_to_host(buf, size=size)
        return ch.send(data)

    def _one_way_recv(self, ch, buf, size, mode):
        if mode == "device":
            return ch.recv(buf, size=size)
        # host mode: land in host memory, then unstage to the device
        tmp = bytearray(size)
        fut = self.future()

        def landed(comp):
            self.runtime.device.host_to_device(buf, bytes(tmp), size=size)
            fut.complete(comp)

        ch.recv(tmp, completion=landed)
        return fut

    @entry
    def run_bw(self, cid, peer, size, window, iters, warmup, mode, leader):
        dev = self.runtime.device
        ch = self.channel(cid, peer)
        sbuf = self.device_alloc(size)
        rbuf = self.device_alloc(size)
        ackbuf = bytearray(8)
        dev.host_to_device(sbuf, _pattern(size))
        for it in range(warmup + iters):
            if leader:
                if it == warmup:
                    self.t0 = self.now
                if mode == "device":
                    for _ in range(window):
                        ch.send(sbuf, size=size)
                else:
                    staged = [dev.device_to_host(sbuf, size=size) for _ in range(window)]
                    for blob in staged:
                        ch.send(blob)
                comp = yield ch.recv(ackbuf)
                assert comp.status == OK
            else:
                # prepost the whole window so every sender RTS finds a
                # matching receive on arrival; completion order is the
                # channel's own counter order
                if mode == "device":
                    futs = [ch.recv(rbuf, size=size) for _ in range(window)]
                    for f in futs:
                        yield f
                else:
                    stash = [bytearray(size) for _ in range(window)]
                    futs = [ch.recv(tmp) for tmp in stash]
                    for f in futs:
                        yield f
                    for tmp in stash:  # phased unstage
                        dev.host_to_device(rbuf, bytes(tmp), size=size)
                ch.send(b"ack done")
        if leader:
            self.t1 = self.now
        else:
            got = dev.device_to_host(rbuf, size=size)
            if got != _pattern(size):
                self.verified = False


# --------------------------------------------------------------------- mpi

def _mpi_latency_main(size, iters, warmup, mode):
    def main(comm):
        dev = comm._chare.runtime.device
        rbuf = comm._chare.device_alloc(size)
        hin = bytearray(size)
        t0 = t1 = None
        verified = True
        if comm.rank == 0:
            sbuf = comm._chare.device_alloc(size)
            dev.host_to_device(sbuf, _pattern(size))

        def landed():
            if mode == "host":
                dev.host_to_device(rbuf, bytes(hin), size=size)

        rsink = rbuf if mode == "device" else hin
        other = 1 - comm.rank
        for k in range(warmup + iters):
            if comm.rank == 0:
                if k == warmup:
                    t0 = comm._chare.now
                out = sbuf if mode == "device" else dev.device_to_host(sbuf, size=size)
                yield from comm.send(out, other, tag=1)
                yield from comm.recv(rsink, source=other, tag=2)
                landed()
                # the echo passed through rank 1's device buffer, so this
                # check covers both directions; keep it off rank 1, whose
                # isend may still have a rendezvous payload in flight
                if k == 0:
                    if dev.device_to_host(rbuf, size=size) != _pattern(size):
                        verified = False
            else:
                yield from comm.recv(rsink, source=other, tag=1)
                landed()
                if mode == "device":
                    yield from comm.send(rbuf, other, tag=2)
                else:
                    out = dev.device_to_host(rbuf, size=size)
                    yield from comm.send(out, other, tag=2)
        if comm.rank == 0:
            t1 = comm._chare.now
            if dev.device_to_host(rbuf, size=size) != _pattern(size):
                verified = False
        return (t0, t1, verified)

    return main


def _mpi_bw_main(size, window, iters, warmup, mode):
    def main(comm):
        dev = comm._chare.runtime.device
        other = 1 - comm.rank
        if comm.rank == 0:
            sbuf = comm._chare.device_alloc(size)
            dev.host_to_device(sbuf, _pattern(size))
        else:
            rbuf = comm._chare.device_alloc(size)
        ackbuf = bytearray(8)
        t0 = t1 = None
        verified = True
        for it in range(warmup + iters):
            if comm.rank == 0:
                if it == warmup:
                    t0 = comm._chare.now
                if mode == "device":
                    reqs = [comm.isend(sbuf, other, tag=3) for _ in range(window)]
                else:
                    staged = [dev.device_to_host(sbuf, size=size) for _ in range(window)]
                    reqs = [comm.isend(blob, other, tag=3) for blob in staged]
                yield from comm.waitall(reqs)
                yield from comm.recv(ackbuf, source=other, tag=4)
            else:
                if mode == "device":
                    reqs = [comm.irecv(rbuf, source=other, tag=3) for _ in range(window)]
                    yield from comm.waitall(reqs)
                else:
                    bufs = [bytearray(size) for _ in range(window)]
                    reqs = [comm.irecv(b, source=other, tag=3) for b in bufs]
                    yield from comm.waitall(reqs)
                    for b in bufs:  # phased unstage
                        dev.host_to_device(rbuf, bytes(b), size=size)
                yield from comm.send(b"ack done", other, tag=4)
        if comm.rank == 0:
            t1 = comm._chare.now
        else:
            if dev.device_to_host(rbuf, size=size) != _pattern(size):
                verified = False
        return (t0, t1, verified)

    return main


# ------------------------------------------------------------ measurement

def bench_config(pes: int = 2, time_mode: str = VIRTUAL, ranks_per_node: int = 1,
                 seed: int = 0, base: RuntimeConfig | None = None) -> RuntimeConfig:
    cfg = base or RuntimeConfig()
    return cfg.with_overrides(workers=pes, time_mode=time_mode,
                              ranks_per_node=ranks_per_node, seed=seed)


def measure_latency(api: str, mode: str, size: int, iters: int = DEFAULT_LATENCY_ITERS,
                    warmup: int = DEFAULT_WARMUP, cfg: RuntimeConfig | None = None) -> dict:
    """One-way latency in ns (ping-pong round trip / 2), plus integrity."""
    _validate(api, mode, size)
    cfg = cfg or bench_config()
    warmup = max(warmup, 1)  # iteration 0 doubles as the integrity check
    if api == "mpi":
        rt = mpi_run(_mpi_latency_main(size, iters, warmup, mode), 2,
                     cfg=_two_pe(cfg))
        t0, t1, verified = rank_result(rt, 0)
        v1 = rank_result(rt, 1)[2]
        rt.close()
        verified = verified and v1
    else:
        rt = Runtime(_two_pe(cfg))
        if api == "charm-messaging":
            rt.register(_MsgPeer)
            ids = rt.create(_MsgPeer, 2, placement=[0, 1])
            rt.launch(ids[0], "run_latency", ids[1], size, iters, warmup, mode)
        else:
            rt.register(_ChanPeer)
            ids = rt.create(_ChanPeer, 2, placement=[0, 1])
            rt.launch(ids[0], "run_latency", 1, ids[1], size, iters, warmup, mode, True)
            rt.launch(ids[1], "run_latency", 1, ids[0], size, iters, warmup, mode, False)
        rt.run()
        a = rt.pe(0).chares[(0, 0)]
        b = rt.pe(1).chares[(0, 1)]
        t0, t1 = a.t0, a.t1
        verified = a.verified and b.verified
        rt.close()
    if t0 is None or t1 is None:
        raise BenchError(f"{api}/{mode} latency run did not complete")
    return {
        "benchmark": "latency",
        "api": api,
        "mode": mode,
        "size": size,
        "value_ns": (t1 - t0) / (2 * iters),
        "verified": verified,
    }


def measure_bandwidth(api: str, mode: str, size: int, window: int = DEFAULT_WINDOW,
                      iters: int = DEFAULT_BW_ITERS, warmup: int = 1,
                      cfg: RuntimeConfig | None = None) -> dict:
    """Windowed one-way bandwidth in GB/s (decimal), plus integrity."""
    _validate(api, mode, size)
    if window < 1:
        raise BenchError("window must be at least 1")
    cfg = cfg or bench_config()
    warmup = max(warmup, 1)
    if api == "mpi":
        rt = mpi_run(_mpi_bw_main(size, window, iters, warmup, mode), 2,
                     cfg=_two_pe(cfg))
        t0, t1, _ = rank_result(rt, 0)
        verified = rank_result(rt, 1)[2]
        rt.close()
    else:
        rt = Runtime(_two_pe(cfg))
        if api == "charm-messaging":
            rt.register(_MsgPeer)
            ids = rt.create(_MsgPeer, 2, placement=[0, 1])
            rt.launch(ids[0], "run_bw", ids[1], size, window, iters, warmup, mode)
        else:
            rt.register(_ChanPeer)
            ids = rt.create(_ChanPeer, 2, placement=[0, 1])
            rt.launch(ids[0], "run_bw", 1, ids[1], size, window, iters, warmup, mode, True)
            rt.launch(ids[1], "run_bw", 1, ids[0], size, window, iters, warmup, mode, False)
        rt.run()
        a = rt.pe(0).chares[(0, 0)]
        b = rt.pe(1).chares[(0, 1)]
        t0, t1 = a.t0, a.t1
        if api == "charm-channel":
            verified = b.verified
        else:
            landed = rt.device.device_to_host(b.rbuf, size=size)
            verified = landed == _pattern(size)
        rt.close()
    if t0 is None or t1 is None or t1 <= t0:
        raise BenchError(f"{api}/{mode} bandwidth run did not complete")
    total_bytes = iters * window * size
    return {
        "benchmark": "bandwidth",
        "api": api,
        "mode": mode,
        "size": size,
        "value_gbps": total_bytes / (t1 - t0),  # bytes per ns == GB/s
        "verified": verified,
    }


def _two_pe(cfg: RuntimeConfig) -> RuntimeConfig:
    if cfg.workers != 2:
        cfg = cfg.with_overrides(workers=2)
    return cfg


def _validate(api: str, mode: str, size: int) -> None:
    if api not in APIS:
        raise BenchError(f"api must be one of {APIS}, got {api!r}")
    if mode not in MODES:
        raise BenchError(f"mode must be one of {MODES}, got {mode!r}")
    if size < 1:
        raise BenchError("size must be at least 1 byte")


# ---------------------------------------------------------------- the CLI

def parse_sizes(spec: str) -> list[int]:
    """``1:4194304:x2`` (geometric), ``1:65536:+4096`` (arithmetic), or a
    comma list like ``8,64,4096``."""
    try:
        if ":" not in spec:
            return [int(s) for s in spec.split(",")]
        lo_s, hi_s, step_s = spec.split(":")
        lo, hi = int(lo_s), int(hi_s)
        sizes = []
        cur = lo
        if step_s.startswith("x"):
            factor = int(step_s[1:])
            if factor < 2:
                raise BenchError("geometric factor must be >= 2")
            while cur <= hi:
                sizes.append(cur)
                cur = cur * factor if cur else 1
        elif step_s.startswith("+"):
            inc = int(step_s[1:])
            if inc < 1:
                raise BenchError("arithmetic step must be >= 1")
            while cur <= hi:
                sizes.append(cur)
                cur += inc
        else:
            raise BenchError(f"bad size step {step_s!r} (use xN or +N)")
    except ValueError as exc:
        raise BenchError(f"bad size spec {spec!r}") from exc
    if not sizes:
        raise BenchError(f"size spec {spec!r} selects nothing")
    return sizes


def _add_shared_args(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--pes", type=int, default=2, help="PE count (point-to-point uses 2)")
    ap.add_argument("--ranks-per-node", type=int, default=1)
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("--time-mode", choices=(WALL, VIRTUAL), default=VIRTUAL)
    ap.add_argument("--seed", type=int, default=0)


def build_config(args) -> RuntimeConfig:
    base = load_config(args.config) if args.config else None
    return bench_config(pes=args.pes, time_mode=args.time_mode,
                        ranks_per_node=args.ranks_per_node, seed=args.seed,
                        base=base)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="charmlet-bench",
        description="Point-to-point latency and bandwidth benchmarks.",
    )
    ap.add_argument("--benchmark", choices=("latency", "bandwidth"), default="latency")
    ap.add_argument("--api", choices=APIS, default="charm-messaging")
    ap.add_argument("--mode", choices=MODES, default="device")
    ap.add_argument("--sizes", default="1:4194304:x2")
    ap.add_argument("--iters", type=int, default=None)
    ap.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    ap.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    ap.add_argument("--csv", help="write results to this CSV file")
    _add_shared_args(ap)
    args = ap.parse_args(argv)

    cfg = build_config(args)
    sizes = parse_sizes(args.sizes)
    rows = []
    for size in sizes:
        if args.benchmark == "latency":
            iters = args.iters or DEFAULT_LATENCY_ITERS
            r = measure_latency(args.api, args.mode, size, iters=iters,
                                warmup=args.warmup, cfg=cfg)
            value, metric, unit = r["value_ns"] / 1000.0, "latency", "us"
        else:
            iters = args.iters or DEFAULT_BW_ITERS
            r = measure_bandwidth(args.api, args.mode, size, window=args.window,
                                  iters=iters, warmup=args.warmup, cfg=cfg)
            value, metric, unit = r["value_gbps"], "bandwidth", "GB/s"
        if not r["verified"]:
            print(f"warning: payload checksum failed at size {size}", file=sys.stderr)
        rows.append({
            "benchmark": args.benchmark,
            "api": args.api,
            "mode": args.mode,
            "size_bytes": size,
            "metric": metric,
            "value": f"{value:.4f}",
            "unit": unit,
            "time_mode": args.time_mode,
        })
        print(f"{size:>10}  {value:>14.4f} {unit}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=[
                "benchmark", "api", "mode", "size_bytes", "metric",
                "value", "unit", "time_mode",
            ])
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
