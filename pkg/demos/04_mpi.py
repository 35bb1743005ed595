"""The MPI-like facade: ranks, tags, wildcards, device transparency.

Each rank runs one generator; send/recv suspend the generator until the
transfer completes. Matching is per (source, tag) with ANY_TAG
wildcarding, non-overtaking within a pair. Host bytes and device
buffers are interchangeable on both ends.
"""

import numpy as np

from charmlet import ANY_TAG, RuntimeConfig, mpi_run, rank_result


def main_rank(comm):
    dev = comm._chare.runtime.device

    if comm.rank == 0:
        # a host send and a device send, different tags
        yield from comm.send(b"from-zero-host", 2, tag=7)
        data = np.arange(8, dtype=np.float64)
        buf = comm._chare.device_alloc(data.nbytes)
        dev.host_to_device(buf, data.tobytes())
        yield from comm.send(buf, 2, tag=8)
        return "rank0 done"

    if comm.rank == 1:
        yield from comm.send(b"from-one", 2, tag=9)
        return "rank1 done"

    # rank 2 receives: exact tags from 0, wildcard from 1
    sink = bytearray(15)
    st = yield from comm.recv(sink, source=0, tag=7)
    first = (bytes(sink[:st.count]), st.source, st.tag)

    dbuf = comm._chare.device_alloc(64)
    st = yield from comm.recv(dbuf, source=0, tag=8)
    doubles = np.frombuffer(dev.device_to_host(dbuf), dtype=np.float64)

    any_sink = bytearray(32)
    st = yield from comm.recv(any_sink, source=1, tag=ANY_TAG)
    return first, doubles.sum(), (bytes(any_sink[:st.count]), st.tag)


def main():
    cfg = RuntimeConfig(workers=3, time_mode="virtual")
    rt = mpi_run(main_rank, 3, cfg=cfg)
    print(rank_result(rt, 0))
    print(rank_result(rt, 1))
    first, total, wild = rank_result(rt, 2)
    print(f"rank2 got {first[0]!r} (source {first[1]}, tag {first[2]})")
    print(f"rank2 device recv sums to {total}")
    print(f"rank2 wildcard recv: {wild[0]!r} matched tag {wild[1]}")
    rt.close()


if __name__ == "__main__":
    main()
