"""Channel semantics: derived tags, lockstep pairing, zero envelopes.

Reference model for every randomized schedule: within one direction the
kth completed receive must carry exactly the payload of the kth send,
no matter how the two endpoints interleave their operations or which
side of the eager threshold each payload falls on.
"""

import random

import pytest

from charmlet.channels import Channel, ChannelError
from charmlet.completion import ChareId, OK, TRUNCATED
from charmlet.config import RuntimeConfig
from charmlet.runtime import Chare, Runtime, entry
from charmlet.tags import CHANNEL

THRESHOLD = 2048
SIZES = (0, 1, 17, 300, THRESHOLD - 1, THRESHOLD, THRESHOLD + 1, 9000, 40000)


def make_runtime(workers=2):
    cfg = RuntimeConfig(workers=workers, time_mode="virtual", eager_threshold=THRESHOLD)
    return Runtime(cfg)


def content(direction: str, k: int, size: int) -> bytes:
    rng = random.Random(sum(direction.encode()) * 100003 + k)
    block = bytes(rng.randrange(256) for _ in range(64))
    return (block * ((size + 63) // 64))[:size]


def test_channel_smoke_bidirectional():
    class Side(Chare):
        def __init__(self):
            self.got = None

        @entry
        def go(self, cid, peer, payload, expect_n):
            ch = self.channel(cid, peer)
            sf = ch.send(payload)
            buf = bytearray(expect_n)
            rf = ch.recv(buf)
            yield sf
            comp = yield rf
            assert comp.status == OK and comp.length == expect_n
            self.got = bytes(buf)

    rt = make_runtime(workers=2)
    rt.register(Side)
    ids = rt.create(Side, 2)
    rt.launch(ids[0], "go", 9, ids[1], b"from-a" * 3, 18)
    rt.launch(ids[1], "go", 9, ids[0], b"from-b" * 3, 18)
    rt.run()
    assert rt.pe(0).chares[(0, 0)].got == b"from-b" * 3
    assert rt.pe(1).chares[(0, 1)].got == b"from-a" * 3
    rt.close()


class Streamer(Chare):
    """Runs a pre-planned op schedule over one channel endpoint."""

    def __init__(self):
        self.rbufs = {}
        self.done = False

    @entry
    def run_ops(self, cid, peer, ops, out_sizes, in_sizes, out_label, in_label):
        ch = self.channel(cid, peer)
        dev = self.runtime.device
        futs = []
        for kind, k, space in ops:
            if kind == "send":
                data = content(out_label, k, out_sizes[k])
                if space == "dev":
                    buf = self.device_alloc(len(data))
                    dev.host_to_device(buf, data)
                    futs.append(ch.send(buf))
                else:
                    futs.append(ch.send(data))
            else:
                n = in_sizes[k]
                if space == "dev":
                    sink = self.device_alloc(max(n, 1))
                    futs.append(ch.recv(sink, size=n))
                else:
                    sink = bytearray(n)
                    futs.append(ch.recv(sink))
                self.rbufs[k] = (space, sink, n)
        for f in futs:
            comp = yield f
            assert comp.status == OK
        self.done = True

    def read_back(self, k):
        space, sink, n = self.rbufs[k]
        if space == "dev":
            return self.runtime.device.device_to_host(sink, size=n) if n else b""
        return bytes(sink)


def run_schedule_trial(seed: int, same_pe: bool = False, self_channel: bool = False) -> None:
    rng = random.Random(seed)

    def plan(n_out, n_in):
        # random interleaving of the two op kinds; k runs in issue order
        # within each kind because the channel counters pair that way
        kinds = ["send"] * n_out + ["recv"] * n_in
        rng.shuffle(kinds)
        ops, so, ro = [], 0, 0
        for kind in kinds:
            if kind == "send":
                ops.append(("send", so, rng.choice(("host", "dev"))))
                so += 1
            else:
                ops.append(("recv", ro, rng.choice(("host", "dev"))))
                ro += 1
        return ops

    if self_channel:
        # one endpoint talking to itself: every send must come back on
        # the same counter stream, so the plan is symmetric by necessity
        rt = make_runtime(workers=1)
        rt.register(Streamer)
        ids = rt.create(Streamer, 1)
        n = rng.randint(1, 8)
        sizes = [rng.choice(SIZES) for _ in range(n)]
        cid = rng.randrange(1 << 20)
        rt.launch(ids[0], "run_ops", cid, ids[0], plan(n, n),
                  sizes, sizes, "aa", "aa")
        rt.run()
        s = rt.pe(0).chares[(0, 0)]
        assert s.done, f"seed {seed}: self-channel schedule did not quiesce"
        for k in range(n):
            assert s.read_back(k) == content("aa", k, sizes[k]), (
                f"seed {seed}: self-channel recv {k} mismatched"
            )
        assert rt.total_envelopes_sent == 1  # the launch seed only
        rt.close()
        return

    rt = make_runtime(workers=2)
    rt.register(Streamer)
    placement = [0, 0] if same_pe else [0, 1]
    ids = rt.create(Streamer, 2, placement=placement)

    n_ab = rng.randint(1, 10)
    n_ba = rng.randint(0, 10)
    sizes_ab = [rng.choice(SIZES) for _ in range(n_ab)]
    sizes_ba = [rng.choice(SIZES) for _ in range(n_ba)]

    cid = rng.randrange(1 << 20)
    rt.launch(ids[0], "run_ops", cid, ids[1], plan(n_ab, n_ba),
              sizes_ab, sizes_ba, "ab", "ba")
    rt.launch(ids[1], "run_ops", cid, ids[0], plan(n_ba, n_ab),
              sizes_ba, sizes_ab, "ba", "ab")
    rt.run()

    a = rt.pe(placement[0]).chares[(0, 0)]
    b = rt.pe(placement[1]).chares[(0, 1)]
    assert a.done and b.done, f"seed {seed}: schedule did not quiesce"
    for k in range(n_ba):
        assert a.read_back(k) == content("ba", k, sizes_ba[k]), (
            f"seed {seed}: A's recv {k} mismatched"
        )
    for k in range(n_ab):
        assert b.read_back(k) == content("ab", k, sizes_ab[k]), (
            f"seed {seed}: B's recv {k} mismatched"
        )
    assert rt.total_envelopes_sent == 2  # the two launch seeds only
    rt.close()


@pytest.mark.parametrize("seed", range(30))
def test_lockstep_random_schedules(seed):
    run_schedule_trial(seed)


@pytest.mark.parametrize("seed", range(100, 110))
def test_lockstep_random_schedules_same_pe(seed):
    run_schedule_trial(seed, same_pe=True)


def test_channel_traffic_sends_no_envelopes():
    class Quiet(Chare):
        def __init__(self):
            self.ok = False

        @entry
        def go(self, cid, peer, sender):
            ch = self.channel(cid, peer)
            if sender:
                for k in range(20):
                    yield ch.send(bytes([k]) * 5000)
            else:
                for k in range(20):
                    buf = bytearray(5000)
                    comp = yield ch.recv(buf)
                    assert comp.length == 5000 and buf[0] == k
            self.ok = True

    rt = make_runtime(workers=2)
    rt.register(Quiet)
    ids = rt.create(Quiet, 2)
    rt.launch(ids[0], "go", 3, ids[1], True)
    rt.launch(ids[1], "go", 3, ids[0], False)
    rt.run()
    assert rt.pe(0).chares[(0, 0)].ok and rt.pe(1).chares[(0, 1)].ok
    # the two seed envelopes are the only envelopes in the whole run
    assert rt.total_envelopes_sent == 2
    rt.close()


def test_self_channel():
    class Loop(Chare):
        def __init__(self):
            self.got = None

        @entry
        def go(self):
            ch = self.channel(4, self.id)
            ch.send(b"around the horn")
            buf = bytearray(15)
            comp = yield ch.recv(buf)
            assert comp.status == OK
            self.got = bytes(buf)

    rt = make_runtime(workers=1)
    rt.register(Loop)
    ids = rt.create(Loop, 1)
    rt.launch(ids[0], "go")
    rt.run()
    assert rt.pe(0).chares[(0, 0)].got == b"around the horn"
    rt.close()


def test_direction_assignment_is_endpoint_symmetric():
    rt = make_runtime(workers=2)
    rt.start()
    a = ChareId(0, 0, 0)
    b = ChareId(0, 1, 1)
    ch_a = Channel(rt.pe(0), 11, a, b)
    ch_b = Channel(rt.pe(1), 11, b, a)
    assert ch_a._send_dir == 0 and ch_b._send_dir == 1
    layout = rt.pe(0).worker.layout
    t = layout.decode(layout.encode_channel(11, 0, 0))
    assert t.kind == CHANNEL and t.channel_id == 11
    rt.close()


def test_duplicate_channel_id_rejected():
    rt = make_runtime(workers=2)
    rt.start()
    a = ChareId(0, 0, 0)
    b = ChareId(0, 1, 1)
    Channel(rt.pe(0), 8, a, b)
    with pytest.raises(ChannelError, match="already open"):
        Channel(rt.pe(0), 8, a, b)
    rt.close()


def test_counter_exhaustion_errors():
    rt = make_runtime(workers=2)
    rt.start()
    ch = Channel(rt.pe(0), 2, ChareId(0, 0, 0), ChareId(0, 1, 1))
    ch._send_ctr = ch._limit
    with pytest.raises(ChannelError, match="exhausted"):
        ch.send(b"x")
    rt.close()


def test_recv_truncation_reports_status():
    class Trunc(Chare):
        def __init__(self):
            self.status = None

        @entry
        def go(self, cid, peer, sender):
            ch = self.channel(cid, peer)
            if sender:
                yield ch.send(b"y" * 100)
            else:
                buf = bytearray(10)
                comp = yield ch.recv(buf)
                self.status = comp.status

    rt = make_runtime(workers=2)
    rt.register(Trunc)
    ids = rt.create(Trunc, 2)
    rt.launch(ids[0], "go", 6, ids[1], True)
    rt.launch(ids[1], "go", 6, ids[0], False)
    rt.run()
    assert rt.pe(1).chares[(0, 1)].status == TRUNCATED
    rt.close()
