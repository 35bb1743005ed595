"""Stream payloads over a channel: derived tags, no envelopes.

Both endpoints open the channel with the same id and name each other;
the kth send in a direction and the kth posted receive derive the same
tag from (channel id, direction, counter) and meet in the transport's
matching engine. Ordering is lockstep by construction, and no metadata
crosses the wire: the envelope counter stays at the two launch seeds.
"""

from charmlet import OK, Chare, Runtime, RuntimeConfig, entry


class Pump(Chare):
    def __init__(self):
        self.received = []

    @entry
    def go(self, cid, peer, outgoing, incoming_sizes):
        ch = self.channel(cid, peer)
        dev = self.runtime.device

        sends = []
        for payload in outgoing:
            buf = self.device_alloc(len(payload))  # stream from device memory
            dev.host_to_device(buf, payload)
            sends.append(ch.send(buf))

        recvs, sinks = [], []
        for n in incoming_sizes:
            sink = bytearray(n)
            sinks.append(sink)
            recvs.append(ch.recv(sink))

        for f in sends + recvs:
            comp = yield f
            assert comp.status == OK
        self.received = [bytes(s) for s in sinks]


def main():
    rt = Runtime(RuntimeConfig(workers=2, time_mode="virtual"))
    rt.register(Pump)
    a, b = rt.create(Pump, 2)

    a_out = [b"alpha", b"bravo" * 1000, b"charlie"]
    b_out = [b"delta" * 2, b"echo"]
    rt.launch(a, "go", 42, b, a_out, [len(p) for p in b_out])
    rt.launch(b, "go", 42, a, b_out, [len(p) for p in a_out])
    rt.start()
    rt.run()

    for name, cid, expect in (("A", a, b_out), ("B", b, a_out)):
        got = rt.pe(cid.home_pe).chares[(cid.collection, cid.element)].received
        assert got == expect
        print(f"{name} received {[len(p) for p in got]} bytes, in send order")
    print(f"envelopes sent: {rt.total_envelopes_sent} (only the two launch seeds)")
    rt.close()


if __name__ == "__main__":
    main()
