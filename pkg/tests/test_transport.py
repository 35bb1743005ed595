"""Transport tests: matching, protocol split, probes, wire model, failures."""

import hashlib
import random

import pytest

from charmlet.completion import OK, TRANSPORT_ERROR, TRUNCATED
from charmlet.config import FRAME_HEADER_BYTES, RuntimeConfig
from charmlet.tags import CHANNEL, DEVICE, FULL_MASK, TagLayout
from charmlet.transport import (
    LayoutMismatchError,
    StartupError,
    TransportError,
    TransportGroup,
)
from matching_reference import run_equivalence_sweep
from util import loopback_pair, pump, tcp_pair

LAYOUT = TagLayout()


def dtag(pe, ctr):
    return LAYOUT.encode_messaging(DEVICE, pe, ctr)


# ------------------------------------------------------------------ lifecycle


def test_worker_preposts_eager_wildcards():
    group, w0, w1, *_ = loopback_pair()
    assert len(w0.posted) == 64
    assert all(r.wildcard for r in w0.posted)


def test_duplicate_worker_id_rejected():
    group = TransportGroup(RuntimeConfig(time_mode="virtual"))
    group.create_worker(0)
    with pytest.raises(StartupError):
        group.create_worker(0)


def test_connect_dead_address_times_out():
    cfg = RuntimeConfig(time_mode="wall", connect_timeout_s=0.5)
    cfg.addresses = {5: "127.0.0.1:1"}  # nothing listens on port 1
    group = TransportGroup(cfg, backend="tcp")
    w0 = group.create_worker(0)
    with pytest.raises(TransportError):
        w0.connect(5)


# ------------------------------------------------------------------- matching


def test_immediate_match_from_unexpected():
    group, w0, w1, e01, _ = loopback_pair()
    w0.tag_send(e01, dtag(3, 5), b"hello")
    pump([w0, w1])
    assert w1.tag_probe(dtag(3, 5)) == (dtag(3, 5), 5)
    got = []
    w1.tag_recv(dtag(3, 5), FULL_MASK, 64, got.append)
    pump([w0, w1])
    assert got and got[0].status == OK and got[0].payload == b"hello"


def test_posted_receive_matches_on_arrival():
    group, w0, w1, e01, _ = loopback_pair()
    got = []
    w1.tag_recv(dtag(1, 1), FULL_MASK, 64, got.append)
    assert w1.progress() == 0  # no traffic yet
    w0.tag_send(e01, dtag(1, 1), b"later")
    pump([w0, w1])
    assert got[0].payload == b"later"


def test_masked_match_and_fifo_within_equal_masked_tags():
    group, w0, w1, e01, _ = loopback_pair()
    for i in range(4):
        w0.tag_send(e01, dtag(7, i), bytes([i]))
    pump([w0, w1])
    got = []
    kind_only = LAYOUT.kind_mask
    for _ in range(4):
        w1.tag_recv(LAYOUT.kind_template(DEVICE), kind_only, 16, got.append)
    pump([w0, w1])
    assert [c.payload for c in got] == [b"\x00", b"\x01", b"\x02", b"\x03"]


def test_per_pair_fifo_same_tag():
    group, w0, w1, e01, _ = loopback_pair()
    tag = LAYOUT.encode_channel(2, 0, 9)
    for i in range(8):
        w0.tag_send(e01, tag, i.to_bytes(2, "little"))
    got = []
    for _ in range(8):
        w1.tag_recv(tag, FULL_MASK, 16, got.append)
    pump([w0, w1])
    assert [int.from_bytes(c.payload, "little") for c in got] == list(range(8))


def test_earliest_posted_wins():
    group, w0, w1, e01, _ = loopback_pair()
    got_a, got_b = [], []
    w1.tag_recv(dtag(0, 0), FULL_MASK, 16, got_a.append)
    w1.tag_recv(dtag(0, 0), FULL_MASK, 16, got_b.append)
    w0.tag_send(e01, dtag(0, 0), b"x")
    pump([w0, w1])
    assert got_a and not got_b


def test_probe_nondestructive_and_consumed_by_recv():
    group, w0, w1, e01, _ = loopback_pair()
    tag = dtag(2, 2)
    w0.tag_send(e01, tag, b"first")
    pump([w0, w1])
    assert w1.tag_probe(tag) == (tag, 5)
    assert w1.tag_probe(tag) == (tag, 5)  # still there
    w0.tag_send(e01, tag, b"second-longer")
    pump([w0, w1])
    got = []
    w1.tag_recv(tag, FULL_MASK, 64, got.append)
    pump([w0, w1])
    assert got[0].payload == b"first"  # the probed (earliest) frame
    assert w1.tag_probe(tag) == (tag, 13)
    assert w1.tag_probe(dtag(9, 9)) is None


def test_truncation_consumes_request_and_drops_frame():
    group, w0, w1, e01, _ = loopback_pair()
    got = []
    w0.tag_send(e01, dtag(1, 2), b"0123456789")
    pump([w0, w1])
    w1.tag_recv(dtag(1, 2), FULL_MASK, 4, got.append)
    pump([w0, w1])
    assert got[0].status == TRUNCATED and got[0].length == 10
    assert w1.tag_probe(dtag(1, 2)) is None  # frame dropped
    assert not any(not r.wildcard for r in w1.posted)  # request consumed


def test_self_endpoint():
    group, w0, w1, *_ = loopback_pair()
    e00 = w0.connect(0)
    got = []
    w0.tag_recv(dtag(0, 7), FULL_MASK, 16, got.append)
    w0.tag_send(e00, dtag(0, 7), b"me")
    pump([w0])
    assert got[0].payload == b"me"


def test_eager_wildcards_capture_eager_kind_only():
    group, w0, w1, e01, _ = loopback_pair()
    eager_tag = LAYOUT.encode_messaging(0, 1, 3)  # EAGER kind
    w0.tag_send(e01, eager_tag, b"machine-layer bytes")
    w0.tag_send(e01, dtag(1, 3), b"device bytes")
    pump([w0, w1])
    assert list(w1.eager_inbox)[0][0] == eager_tag
    assert len(w1.posted) == 64  # wildcard re-posted after consumption
    assert w1.tag_probe(dtag(1, 3)) is not None  # device frame untouched


# ------------------------------------------------------------- protocol split


def _split_roundtrip(make_pair, sizes):
    group, w0, w1, e01, _ = make_pair()
    thr = group.cfg.eager_threshold
    try:
        for size in sizes:
            data = random.Random(size).randbytes(size)
            sent_hash = hashlib.sha256(data).hexdigest()
            got = []
            send_done = []
            w1.tag_recv(dtag(0, size % 97), FULL_MASK, size, got.append)
            w0.tag_send(e01, dtag(0, size % 97), data, send_done.append)
            pump([w0, w1], until=lambda: got and send_done)
            comp = got[0]
            assert comp.status == OK and comp.length == size
            assert hashlib.sha256(comp.payload).hexdigest() == sent_hash
            assert send_done[0].status == OK
            expect_rdv = size > thr
            assert (w0.stats["tx_rts"] > 0) == expect_rdv or not expect_rdv
    finally:
        group.close()


def test_protocol_split_loopback():
    thr = RuntimeConfig().eager_threshold
    _split_roundtrip(loopback_pair, [thr - 1, thr, thr + 1, 4 << 20])


def test_protocol_split_tcp():
    thr = RuntimeConfig().eager_threshold
    _split_roundtrip(tcp_pair, [thr - 1, thr, thr + 1, 4 << 20])


def test_split_frame_kinds_exact():
    group, w0, w1, e01, _ = loopback_pair()
    thr = group.cfg.eager_threshold
    got = []
    w1.tag_recv(dtag(0, 1), FULL_MASK, thr, got.append)
    w0.tag_send(e01, dtag(0, 1), bytes(thr))
    pump([w0, w1])
    assert w0.stats["tx_eager"] == 1 and w0.stats["tx_rts"] == 0
    w1.tag_recv(dtag(0, 2), FULL_MASK, thr + 1, got.append)
    w0.tag_send(e01, dtag(0, 2), bytes(thr + 1))
    pump([w0, w1])
    assert w0.stats["tx_rts"] == 1 and w0.stats["tx_payload"] == 1
    assert w1.stats["tx_pull"] == 1
    assert len(got) == 2 and all(c.status == OK for c in got)


def test_rendezvous_header_probe_visible():
    group, w0, w1, e01, _ = loopback_pair()
    big = group.cfg.eager_threshold + 1000
    w0.tag_send(e01, dtag(4, 4), bytes(big))
    pump([w0, w1])
    assert w1.tag_probe(dtag(4, 4)) == (dtag(4, 4), big)
    # large payload itself stayed at the sender (only the header queued)
    assert w1.unexpected[0].payload is None


def test_device_source_and_sink():
    group, w0, w1, e01, _ = loopback_pair()
    space = group.device_space
    src = space.alloc(0, 2048)
    dst = space.alloc(1, 2048)
    src.view()[:] = 7
    before0, before1 = group.clocks[0].now, group.clocks[1].now
    got = []
    w1.tag_recv(dtag(0, 3), FULL_MASK, 2048, got.append, sink=dst)
    w0.tag_send(e01, dtag(0, 3), src)
    pump([w0, w1])
    assert got[0].status == OK and got[0].payload is None
    assert bytes(dst.view()) == bytes(src.view())
    # device send/recv never touches the copy-cost model
    assert space._used  # allocations happened
    assert group.clocks[0].now >= before0 and group.clocks[1].now >= before1


def test_max_message_size_enforced():
    group, w0, w1, e01, _ = loopback_pair(
        RuntimeConfig(time_mode="virtual", max_message_bytes=1024)
    )
    with pytest.raises(ValueError):
        w0.tag_send(e01, dtag(0, 0), bytes(1025))


# ------------------------------------------------------------ randomized sweep


def test_matching_equivalence_loopback_sweep():
    run_equivalence_sweep(loopback_pair, 120, seed=0xA11CE)


def test_matching_equivalence_tcp_sweep():
    run_equivalence_sweep(tcp_pair, 40, seed=0xB0B)


# ------------------------------------------------------------------ wire model


def test_virtual_time_eager_schedule_oracle():
    group, w0, w1, e01, _ = loopback_pair()
    link = group.cfg.link_between(0, 1)
    got = []
    w1.tag_recv(dtag(0, 0), FULL_MASK, 100, got.append)
    w1.tag_recv(dtag(0, 1), FULL_MASK, 200, got.append)
    w0.tag_send(e01, dtag(0, 0), bytes(100))
    w0.tag_send(e01, dtag(0, 1), bytes(200))
    pump([w0, w1])
    wire1 = FRAME_HEADER_BYTES + 100
    wire2 = FRAME_HEADER_BYTES + 200
    t1 = link.transfer_ns(wire1)
    t2 = link.occupancy_ns(wire1) + link.transfer_ns(wire2)
    assert got[0].timestamp == t1
    assert got[1].timestamp == t2
    assert group.clocks[1].now == t2


def test_virtual_time_rendezvous_schedule_oracle():
    group, w0, w1, e01, _ = loopback_pair()
    link = group.cfg.link_between(0, 1)
    size = group.cfg.eager_threshold * 3
    got = []
    w1.tag_recv(dtag(0, 0), FULL_MASK, size, got.append)
    w0.tag_send(e01, dtag(0, 0), bytes(size))
    pump([w0, w1])
    hdr = FRAME_HEADER_BYTES
    rts_arrive = link.transfer_ns(hdr)
    pull_arrive = rts_arrive + link.transfer_ns(hdr)
    payload_arrive = pull_arrive + link.transfer_ns(hdr + size)
    assert got[0].timestamp == payload_arrive


def test_virtual_time_unexpected_then_recv_uses_max_rule():
    group, w0, w1, e01, _ = loopback_pair()
    link = group.cfg.link_between(0, 1)
    w0.tag_send(e01, dtag(0, 0), bytes(50))
    pump([w0, w1])
    # receiver does local device work before posting the receive
    group.clocks[1].charge(10_000_000)
    got = []
    w1.tag_recv(dtag(0, 0), FULL_MASK, 50, got.append)
    pump([w0, w1])
    assert got[0].timestamp == 10_000_000  # its clock was already past arrival
    w0.tag_send(e01, dtag(0, 1), bytes(50))
    got2 = []
    w1.tag_recv(dtag(0, 1), FULL_MASK, 50, got2.append)
    pump([w0, w1])
    assert got2[0].timestamp == 10_000_000  # send ts + cost < receiver clock


# --------------------------------------------------------------------- errors


def test_layout_digest_mismatch_aborts():
    cfg_a = RuntimeConfig(time_mode="wall")
    cfg_a.addresses = {0: "127.0.0.1:28801", 1: "127.0.0.1:28802"}
    cfg_b = cfg_a.with_overrides()
    from charmlet.config import TagLayoutSpec

    cfg_b.tag_layout = TagLayoutSpec(pe_bits=16, counter_bits=44)
    ga = TransportGroup(cfg_a, backend="tcp")
    gb = TransportGroup(cfg_b, backend="tcp")
    try:
        wa = ga.create_worker(0)
        wb = gb.create_worker(1)
        wa.connect(1)
        with pytest.raises(LayoutMismatchError):
            for _ in range(200):
                wa.progress()
                wb.progress()
    finally:
        ga.close()
        gb.close()


def test_peer_disconnect_fails_pending_rendezvous():
    group, w0, w1, e01, _ = tcp_pair()
    try:
        done = []
        w0.tag_send(e01, dtag(0, 0), bytes(group.cfg.eager_threshold * 2), done.append)
        w1.close()
        pump([w0], rounds=50)
        assert done and done[0].status == TRANSPORT_ERROR
    finally:
        group.close()
