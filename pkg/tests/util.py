"""Shared helpers for transport-level tests."""

import time

from charmlet.config import RuntimeConfig
from charmlet.transport import TransportGroup


def pump(workers, rounds=None, until=None, timeout=5.0):
    """Drive progress on all workers until quiescent (or a predicate holds).

    Quiescent = a full sweep fires no completions and leaves no inbound
    frames or pending TCP bytes.
    """
    deadline = time.monotonic() + timeout
    spins = 0
    while True:
        if until is not None and until():
            return
        fired = 0
        for w in workers:
            fired += w.progress()
        busy = fired > 0
        for w in workers:
            if w.inbound:
                busy = True
            for conn in w._conns:
                if not conn.closed and (conn.rbuf or conn.wbuf or not conn.hello_done):
                    busy = True
        if rounds is not None:
            spins += 1
            if spins >= rounds:
                return
        elif not busy:
            if until is None:
                return
            # predicate not yet true: for TCP, data may still be in flight
            spins += 1
            if spins > 3 and time.monotonic() > deadline:
                raise TimeoutError("pump timed out waiting for condition")
            time.sleep(0.0005)
        else:
            spins = 0


def loopback_pair(cfg=None):
    cfg = cfg or RuntimeConfig(workers=2, time_mode="virtual")
    group = TransportGroup(cfg, backend="loopback")
    w0 = group.create_worker(0)
    w1 = group.create_worker(1)
    e01 = w0.connect(1)
    e10 = w1.connect(0)
    return group, w0, w1, e01, e10


_next_port = [29000]


def tcp_pair(cfg=None):
    cfg = cfg or RuntimeConfig(workers=2, time_mode="wall")
    port0 = _next_port[0]
    port1 = port0 + 1
    _next_port[0] += 2
    cfg.addresses = {0: f"127.0.0.1:{port0}", 1: f"127.0.0.1:{port1}"}
    group = TransportGroup(cfg, backend="tcp")
    w0 = group.create_worker(0)
    w1 = group.create_worker(1)
    e01 = w0.connect(1)
    pump([w0, w1], rounds=4)
    e10 = w1.connect(0)
    pump([w0, w1], rounds=4)
    return group, w0, w1, e01, e10
