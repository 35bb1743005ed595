"""Rank-level send/recv semantics over the chare runtime.

Non-overtaking oracle: for any (source, tag) stream, receives complete
in send order. Transparency oracle: moving a buffer between host and
device memory changes no observable status fields and no bytes.
"""

import random

import numpy as np
import pytest

from charmlet.config import RuntimeConfig
from charmlet.mpi import ANY_TAG, BYTE, DOUBLE, MpiError, mpi_run, rank_result


def test_two_rank_ping():
    def main(comm):
        if comm.rank == 0:
            yield from comm.send(b"hello mpi", 1, tag=5)
            buf = bytearray(9)
            st = yield from comm.recv(buf, source=1, tag=6)
            return (bytes(buf), st.source, st.tag, st.count)
        else:
            buf = bytearray(9)
            st = yield from comm.recv(buf, source=0, tag=5)
            yield from comm.send(bytes(buf).upper(), 0, tag=6)
            return st.count

    rt = mpi_run(main, 2)
    assert rank_result(rt, 0) == (b"HELLO MPI", 1, 6, 9)
    assert rank_result(rt, 1) == 9
    rt.close()


def test_rank_count_must_match_pes():
    with pytest.raises(MpiError, match="ranks"):
        mpi_run(lambda comm: None, 3, cfg=RuntimeConfig(workers=2, time_mode="virtual"))


def test_any_tag_matches_earliest_arrival():
    order = {}

    def main(comm):
        if comm.rank == 0:
            yield from comm.send(b"first", 1, tag=42)
            yield from comm.send(b"second", 1, tag=7)
        else:
            a = bytearray(6)
            b = bytearray(6)
            st1 = yield from comm.recv(a, source=0, tag=ANY_TAG)
            st2 = yield from comm.recv(b, source=0, tag=ANY_TAG)
            order["tags"] = (st1.tag, st2.tag)
            order["bodies"] = (bytes(a[: st1.count]), bytes(b[: st2.count]))

    rt = mpi_run(main, 2)
    assert order["tags"] == (42, 7)
    assert order["bodies"] == (b"first", b"second")
    rt.close()


def test_matching_is_post_order_within_source():
    got = {}

    def main(comm):
        if comm.rank == 0:
            yield from comm.send(b"AAAA", 1, tag=1)
            yield from comm.send(b"BBBB", 1, tag=1)
        else:
            b1 = bytearray(4)
            b2 = bytearray(4)
            r1 = comm.irecv(b1, source=0, tag=1)
            r2 = comm.irecv(b2, source=0, tag=1)
            yield from comm.waitall([r1, r2])
            got["pair"] = (bytes(b1), bytes(b2))

    rt = mpi_run(main, 2)
    assert got["pair"] == (b"AAAA", b"BBBB")
    rt.close()


def test_truncation_raises_on_wait():
    def main(comm):
        if comm.rank == 0:
            yield from comm.send(b"x" * 100, 1, tag=0)
        else:
            buf = bytearray(10)
            try:
                yield from comm.recv(buf, source=0, tag=0)
            except MpiError as e:
                return str(e)
            return "no error"

    rt = mpi_run(main, 2)
    assert "truncated" in rank_result(rt, 1)
    rt.close()


def test_double_datatype_counts():
    def main(comm):
        if comm.rank == 0:
            arr = np.arange(16, dtype=np.float64)
            st = yield from comm.send(arr, 1, tag=3, datatype=DOUBLE)
            return st.count
        else:
            out = np.zeros(16, dtype=np.float64)
            st = yield from comm.recv(out, source=0, tag=3, datatype=DOUBLE)
            return (st.count, float(out.sum()))

    rt = mpi_run(main, 2)
    assert rank_result(rt, 0) == 16
    assert rank_result(rt, 1) == (16, float(np.arange(16).sum()))
    rt.close()


def make_pattern(src, k, size):
    rng = random.Random(src * 7919 + k)
    block = bytes(rng.randrange(256) for _ in range(32))
    return (block * ((size + 31) // 32))[:size]


@pytest.mark.parametrize("seed", range(12))
def test_non_overtaking_randomized(seed):
    """Mixed sizes, tags, and memory spaces from two senders into one
    receiver; per (source, tag) the bodies arrive in send order."""
    rng = random.Random(seed)
    thr = 2048
    plans = {
        src: [
            (rng.choice((0, 1)), rng.choice((8, 512, thr, thr + 16, 10000)),
             rng.choice(("host", "dev")))
            for _ in range(rng.randint(3, 10))
        ]
        for src in (0, 1)
    }
    results = {}

    def main(comm):
        dev = comm._chare.runtime.device
        if comm.rank in plans:
            for k, (tag, size, space) in enumerate(plans[comm.rank]):
                data = make_pattern(comm.rank, k, size)
                if space == "dev":
                    buf = comm._chare.device_alloc(size)
                    dev.host_to_device(buf, data)
                    yield from comm.send(buf, 2, tag=tag)
                else:
                    yield from comm.send(data, 2, tag=tag)
        if comm.rank == 2:
            heard = {0: [], 1: []}
            for src in (0, 1):
                for k, (tag, size, space) in enumerate(plans[src]):
                    if space == "dev":
                        sink = comm._chare.device_alloc(max(size, 1))
                        st = yield from comm.recv(sink, source=src, tag=tag)
                        body = dev.device_to_host(sink, size=size) if size else b""
                    else:
                        sink = bytearray(size)
                        st = yield from comm.recv(sink, source=src, tag=tag)
                        body = bytes(sink)
                    assert st.source == src and st.count == size
                    heard[src].append(body)
            results.update(heard)

    cfg = RuntimeConfig(workers=3, time_mode="virtual", eager_threshold=thr)
    rt = mpi_run(main, 3, cfg=cfg)
    for src in (0, 1):
        expect = [make_pattern(src, k, size) for k, (_, size, _) in enumerate(plans[src])]
        assert results[src] == expect, f"seed {seed}: source {src} reordered or corrupted"
    rt.close()


def _transparency_run(space: str):
    trace = {}

    def main(comm):
        dev = comm._chare.runtime.device
        payload = make_pattern(3, 1, 4000)
        if comm.rank == 0:
            if space == "dev":
                buf = comm._chare.device_alloc(4000)
                dev.host_to_device(buf, payload)
            else:
                buf = payload
            st = yield from comm.send(buf, 1, tag=9)
            trace["send"] = (st.source, st.tag, st.count, st.error)
        else:
            if space == "dev":
                sink = comm._chare.device_alloc(4000)
            else:
                sink = bytearray(4000)
            st = yield from comm.recv(sink, source=0, tag=9)
            body = dev.device_to_host(sink) if space == "dev" else bytes(sink)
            trace["recv"] = (st.source, st.tag, st.count, st.error)
            trace["body"] = body

    rt = mpi_run(main, 2)
    rt.close()
    return trace


def test_host_device_transparency():
    host = _transparency_run("host")
    dev = _transparency_run("dev")
    assert host["send"] == dev["send"]
    assert host["recv"] == dev["recv"]
    assert host["body"] == dev["body"] == make_pattern(3, 1, 4000)


def test_send_to_self_rank():
    def main(comm):
        if comm.rank == 0:
            req = comm.irecv(bytearray(4), source=0, tag=1)
            yield from comm.send(b"loop", 0, tag=1)
            st = yield from comm.wait(req)
            return st.count

    rt = mpi_run(main, 1)
    assert rank_result(rt, 0) == 4
    rt.close()
