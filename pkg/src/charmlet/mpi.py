"""Rank-oriented two-sided messaging over the chare runtime.

One rank per PE, addressed by index. Receives match on (source, tag)
with ANY_TAG wildcarding, in post order against arrival order, and
messages between a rank pair never overtake each other. Host payloads
ride inside the metadata envelope; device payloads travel as tagged
transport sends whose descriptor rides in the envelope's host arguments,
so the receive for the payload is posted only after the host-side match
has picked a destination buffer.

User programs are functions of a communicator, run as entry methods, so
they may suspend with ``yield from comm.recv(...)`` style calls.
"""

from __future__ import annotations

from types import GeneratorType

import numpy as np

from . import devmsg
from .completion import OK, Future
from .config import RuntimeConfig
from .devicesim import DeviceBuffer, DeviceRegion, as_region
from .runtime import Chare, Runtime, entry

ANY_TAG = -1

BYTE = "byte"
DOUBLE = "double"
_ITEMSIZE = {BYTE: 1, DOUBLE: 8}


class MpiError(RuntimeError):
    pass


class Status:
    __slots__ = ("source", "tag", "count", "error")

    def __init__(self, source=-1, tag=-1, count=0, error=None):
        self.source = source
        self.tag = tag
        self.count = count
        self.error = error

    def __repr__(self):
        e = f", error={self.error!r}" if self.error else ""
        return f"Status(source={self.source}, tag={self.tag}, count={self.count}{e})"


class MpiRequest:
    __slots__ = ("future", "kind")

    def __init__(self, future, kind):
        self.future = future
        self.kind = kind  # "send" | "recv"

    @property
    def done(self) -> bool:
        return self.future.done


def _byte_view(buf):
    """Writable flat byte view over a host buffer."""
    if isinstance(buf, bytearray):
        return memoryview(buf)
    if isinstance(buf, memoryview):
        return buf.cast("B")
    if isinstance(buf, np.ndarray):
        if not buf.flags.c_contiguous:
            raise MpiError("buffers must be C-contiguous")
        return memoryview(buf.reshape(-1).view(np.uint8))
    raise MpiError(f"unsupported receive buffer type {type(buf).__name__}")


def _read_bytes(buf):
    if isinstance(buf, (bytes, bytearray, memoryview)):
        return bytes(buf)
    if isinstance(buf, np.ndarray):
        return buf.tobytes()
    raise MpiError(f"unsupported send buffer type {type(buf).__name__}")


class _PostedRecv:
    __slots__ = ("source", "tag", "buf", "dtype", "request")

    def __init__(self, source, tag, buf, dtype, request):
        self.source = source
        self.tag = tag
        self.buf = buf
        self.dtype = dtype
        self.request = request

    def matches(self, source, tag) -> bool:
        return self.source == source and (self.tag == ANY_TAG or self.tag == tag)


class MpiComm:
    """Communicator bound to one rank chare."""

    def __init__(self, chare, rank_ids):
        self._chare = chare
        self._ids = rank_ids
        self.rank = chare.id.element
        self.size = len(rank_ids)
        self._posted: list[_PostedRecv] = []
        self._unexpected: list[tuple] = []  # (src, tag, payload | descriptor)

    # ---------------------------------------------------------------- sends

    def isend(self, buf, dest: int, tag: int, datatype: str = BYTE) -> MpiRequest:
        if not 0 <= dest < self.size:
            raise MpiError(f"destination rank {dest} outside 0..{self.size - 1}")
        if tag < 0:
            raise MpiError("send tags must be non-negative")
        chare = self._chare
        fut = chare.future()
        req = MpiRequest(fut, "send")
        if isinstance(buf, (DeviceBuffer, DeviceRegion)):
            region = as_region(buf)
            desc = devmsg.device_send(
                chare._pe,
                self._ids[dest].home_pe,
                region,
                completion=_SendDone(fut, self.rank, tag, region.size, datatype),
            )
            chare.proxy(self._ids[dest])._dev_msg(self.rank, tag, desc.tag, desc.size)
        else:
            payload = _read_bytes(buf)
            chare.proxy(self._ids[dest])._host_msg(self.rank, tag, payload)
            fut.complete(Status(source=self.rank, tag=tag,
                                count=len(payload) // _ITEMSIZE[datatype]))
        return req

    # -------------------------------------------------------------- receives

    def irecv(self, buf, source: int, tag: int = ANY_TAG,
              datatype: str = BYTE) -> MpiRequest:
        if not 0 <= source < self.size:
            raise MpiError(f"source rank {source} outside 0..{self.size - 1}")
        if tag < 0 and tag != ANY_TAG:
            raise MpiError("receive tags must be non-negative or ANY_TAG")
        fut = self._chare.future()
        req = MpiRequest(fut, "recv")
        posted = _PostedRecv(source, tag, buf, datatype, req)
        for i, (src, mtag, body) in enumerate(self._unexpected):
            if posted.matches(src, mtag):
                del self._unexpected[i]
                self._fill(posted, src, mtag, body)
                return req
        self._posted.append(posted)
        return req

    # --------------------------------------------------------- waiting sugar

    def wait(self, req: MpiRequest):
        status = req.future.value if req.future.done else (yield req.future)
        if status.error:
            raise MpiError(status.error)
        return status

    def waitall(self, reqs):
        out = []
        for r in reqs:
            out.append((yield from self.wait(r)))
        return out

    def send(self, buf, dest, tag, datatype: str = BYTE):
        return (yield from self.wait(self.isend(buf, dest, tag, datatype)))

    def recv(self, buf, source, tag=ANY_TAG, datatype: str = BYTE):
        return (yield from self.wait(self.irecv(buf, source, tag, datatype)))

    # -------------------------------------------------------------- matching

    def _deliver_host(self, src, tag, payload):
        for i, posted in enumerate(self._posted):
            if posted.matches(src, tag):
                del self._posted[i]
                self._fill(posted, src, tag, payload)
                return
        self._unexpected.append((src, tag, payload))

    def _deliver_dev(self, src, tag, descriptor):
        for i, posted in enumerate(self._posted):
            if posted.matches(src, tag):
                del self._posted[i]
                self._fill(posted, src, tag, descriptor)
                return
        self._unexpected.append((src, tag, descriptor))

    def _fill(self, posted, src, tag, body):
        if isinstance(body, devmsg.DeviceDescriptor):
            self._fill_from_device(posted, src, tag, body)
        else:
            self._fill_from_host(posted, src, tag, body)

    def _fill_from_host(self, posted, src, tag, payload):
        n = len(payload)
        status = Status(source=src, tag=tag, count=n // _ITEMSIZE[posted.dtype])
        if isinstance(posted.buf, (DeviceBuffer, DeviceRegion)):
            region = as_region(posted.buf)
            if n > region.size:
                status.error = (f"message of {n} bytes from rank {src} truncated "
                                f"by a {region.size}-byte buffer")
                status.count = 0
            else:
                region.buffer.write_wire(payload, region.offset)
        else:
            view = _byte_view(posted.buf)
            if n > len(view):
                status.error = (f"message of {n} bytes from rank {src} truncated "
                                f"by a {len(view)}-byte buffer")
                status.count = 0
            else:
                view[:n] = payload
        posted.request.future.complete(status)

    def _fill_from_device(self, posted, src, tag, desc):
        pe = self._chare._pe
        done = _RecvDone(posted.request.future, src, tag, desc.size, posted.dtype)
        if isinstance(posted.buf, (DeviceBuffer, DeviceRegion)):
            devmsg.device_recv(pe, desc, posted.buf,
                               receiver_type=devmsg.MPI, completion=done)
        else:
            view = _byte_view(posted.buf)
            pe.worker.tag_recv(desc.tag, capacity=len(view), sink=view, completion=done)


class _SendDone:
    __slots__ = ("future", "rank", "tag", "nbytes", "dtype")

    def __init__(self, future, rank, tag, nbytes, dtype):
        self.future = future
        self.rank = rank
        self.tag = tag
        self.nbytes = nbytes
        self.dtype = dtype

    def __call__(self, comp):
        if comp.status == OK:
            self.future.complete(Status(source=self.rank, tag=self.tag,
                                        count=self.nbytes // _ITEMSIZE[self.dtype]))
        else:
            self.future.complete(Status(source=self.rank, tag=self.tag,
                                        error=comp.error or comp.status))


class _RecvDone:
    __slots__ = ("future", "source", "tag", "nbytes", "dtype")

    def __init__(self, future, source, tag, nbytes, dtype):
        self.future = future
        self.source = source
        self.tag = tag
        self.nbytes = nbytes
        self.dtype = dtype

    def __call__(self, comp):
        if comp.status == OK:
            self.future.complete(Status(source=self.source, tag=self.tag,
                                        count=self.nbytes // _ITEMSIZE[self.dtype]))
        else:
            self.future.complete(Status(source=self.source, tag=self.tag,
                                        error=comp.error or comp.status))


class _Rank(Chare):
    """Hidden chare that hosts one rank's communicator and main function."""

    def __init__(self, main):
        self._main = main
        self.comm = None
        self.result = None

    @entry
    def _boot(self, rank_ids):
        self.comm = MpiComm(self, rank_ids)
        res = self._main(self.comm)
        if isinstance(res, GeneratorType):
            res = yield from res
        self.result = res

    @entry
    def _host_msg(self, src, tag, payload):
        self.comm._deliver_host(src, tag, payload)

    @entry
    def _dev_msg(self, src, tag, desc_tag, desc_size):
        self.comm._deliver_dev(src, tag, devmsg.DeviceDescriptor(desc_tag, desc_size))


def mpi_run(main, nranks: int, cfg: RuntimeConfig | None = None,
            backend: str = "loopback") -> Runtime:
    """Run ``main(comm)`` on every rank and drive to completion.

    nranks must equal the configured PE count; returns the finished
    runtime so callers can read clocks or rank results.
    """
    cfg = cfg or RuntimeConfig(workers=nranks, time_mode="virtual")
    if nranks != cfg.workers:
        raise MpiError(f"requested {nranks} ranks on {cfg.workers} PEs")
    rt = Runtime(cfg, backend=backend)
    rt.register(_Rank)
    ids = rt.create(_Rank, nranks, args=(main,), placement=list(range(nranks)))
    for cid in ids:
        rt.launch(cid, "_boot", tuple(ids))
    rt.run()
    return rt


def rank_result(rt: Runtime, rank: int):
    """The value main() returned on one rank (after mpi_run)."""
    pe = rt.pe(rank)
    for (coll, elem), chare in pe.chares.items():
        if isinstance(chare, _Rank) and elem == rank:
            return chare.result
    raise MpiError(f"no rank chare {rank} found")
