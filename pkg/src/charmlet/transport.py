"""Tagged point-to-point transport with loopback and TCP backends.

Non-blocking tagged sends and receives over 64-bit tags with masked
matching: a receive (tag, mask) matches a frame when
``frame.tag & mask == tag & mask``. Arriving frames match the earliest
posted receive; posted receives match the earliest arrived frame; ties
within equal masked tags resolve FIFO. Unmatched frames wait in an
unexpected queue that tagProbe can inspect non-destructively.

Payloads at or below the eager threshold travel in a single eager frame.
Above it the sender emits a ready-to-send (RTS) control frame; the
receiver answers with a payload-pull once a matching receive exists, and
only then does the payload cross. Large payloads therefore never sit in
the unexpected queue, only their headers do.

Wire format (TCP, little-endian):
    frame     = "CLT1" | kind u8 | tag u64 | length u32 | body
                kinds 0 (eager) and 3 (payload) carry length body bytes;
                kinds 1 (rts) and 2 (payload-pull) carry none (for an RTS
                the length field announces the coming payload's size).
    handshake = "CLT1" | version u16 | layout digest u64 | worker id u32
Frames between one ordered worker pair are delivered in send order.

Virtual time (loopback backend only): each ordered endpoint pair owns a
wire; a frame departs at max(sender clock, previous frame's transmit end)
and occupies size/bandwidth. On delivery the receiver clock advances to
max(own clock, depart + latency + size/bandwidth).
"""

from __future__ import annotations

import socket
import struct
from collections import Counter, deque
from dataclasses import dataclass

from .completion import (
    OK,
    TRANSPORT_ERROR,
    TRUNCATED,
    Completion,
    deliver,
)
from .config import FRAME_HEADER_BYTES, RuntimeConfig
from .devicesim import DeviceBuffer, DeviceRegion, DeviceSpace, as_region
from .tags import EAGER, FULL_MASK, TagLayout
from .timebase import make_clock

MAGIC = b"CLT1"
PROTOCOL_VERSION = 1

FRAME_EAGER = 0
FRAME_RTS = 1
FRAME_PULL = 2
FRAME_PAYLOAD = 3

_FRAME_NAMES = {0: "eager", 1: "rts", 2: "pull", 3: "payload"}
_HEADER = struct.Struct("<4sBQI")  # magic, kind, tag, length
_HELLO = struct.Struct("<4sHQI")  # magic, version, digest, worker id
HELLO_BYTES = _HELLO.size

assert _HEADER.size == FRAME_HEADER_BYTES


class TransportError(RuntimeError):
    pass


class StartupError(TransportError):
    pass


class LayoutMismatchError(TransportError):
    pass


def encode_frame(kind: int, tag: int, length: int, body: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, kind, tag, length) + body


def encode_hello(digest: int, worker_id: int) -> bytes:
    return _HELLO.pack(MAGIC, PROTOCOL_VERSION, digest, worker_id)


def parse_hello(data: bytes) -> tuple[int, int]:
    magic, version, digest, worker_id = _HELLO.unpack(data)
    if magic != MAGIC:
        raise TransportError(f"bad handshake magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise TransportError(f"protocol version mismatch: ours {PROTOCOL_VERSION}, theirs {version}")
    return digest, worker_id


@dataclass
class Frame:
    kind: int
    tag: int
    length: int
    payload: bytes | None
    src: int
    arrive_ts: int = 0  # virtual-time arrival (loopback only)
    seq: int = 0  # arrival order at the receiver

    def __repr__(self):
        return (
            f"Frame({_FRAME_NAMES[self.kind]}, tag=0x{self.tag:016x}, "
            f"len={self.length}, src={self.src})"
        )


class ReceiveRequest:
    __slots__ = ("tag", "mask", "capacity", "sink", "completion", "seq", "wildcard", "done")

    def __init__(self, tag, mask, capacity, sink, completion, seq, wildcard=False):
        self.tag = tag
        self.mask = mask
        self.capacity = capacity
        self.sink = sink
        self.completion = completion
        self.seq = seq
        self.wildcard = wildcard
        self.done = False

    def matches(self, frame_tag: int) -> bool:
        return (frame_tag & self.mask) == (self.tag & self.mask)


class _PendingSend:
    """Sender-side record of a rendezvous awaiting its pull."""

    __slots__ = ("tag", "source", "length", "completion")

    def __init__(self, tag, source, length, completion):
        self.tag = tag
        self.source = source  # bytes or DeviceRegion
        self.length = length
        self.completion = completion


class Endpoint:
    """Sender-side handle for one ordered worker pair."""

    __slots__ = ("worker", "peer", "link", "wire_free", "conn", "failed", "pending_rdv")

    def __init__(self, worker: "Worker", peer: int, link):
        self.worker = worker
        self.peer = peer
        self.link = link
        self.wire_free = 0  # virtual time the wire frees up
        self.conn = None  # TCP connection (shared both directions)
        self.failed = False
        self.pending_rdv: dict[int, deque] = {}  # tag -> pending sends, FIFO


class _Conn:
    """One TCP socket plus its parse/flush state."""

    __slots__ = ("sock", "peer", "rbuf", "wbuf", "hello_done", "closed")

    def __init__(self, sock):
        self.sock = sock
        self.peer = None
        self.rbuf = bytearray()
        self.wbuf = bytearray()
        self.hello_done = False
        self.closed = False


class Worker:
    """One transport endpoint set: matching engine plus backend state."""

    def __init__(self, group: "TransportGroup", worker_id: int):
        self.group = group
        self.id = worker_id
        self.cfg = group.cfg
        self.layout = group.layout
        self.clock = group.clocks[worker_id]
        self.posted: list[ReceiveRequest] = []
        self.unexpected: list[Frame] = []
        self.inbound: deque[Frame] = deque()
        self.endpoints: dict[int, Endpoint] = {}
        self.stats: Counter = Counter()
        self.eager_handler = None  # set by the runtime machine layer
        self.eager_inbox: deque = deque()
        self._fired: deque = deque()  # (handle, Completion) ready to fire
        self._pulled: dict[tuple[int, int], deque] = {}  # (src, tag) -> requests
        self._post_seq = 0
        self._arrival_seq = 0
        self._listener = None
        self._conns: list[_Conn] = []
        self.hold = None  # optional frame predicate: True parks the frame
        self._held: list[Frame] = []
        if self.cfg.eager_prepost:
            eager_tpl = self.layout.kind_template(EAGER)
            for _ in range(self.cfg.eager_prepost):
                self._post(
                    eager_tpl,
                    self.layout.kind_mask,
                    self.cfg.eager_threshold,
                    None,
                    None,
                    wildcard=True,
                )

    # ------------------------------------------------------------ connections

    def listen(self, address: str) -> None:
        host, port = address.rsplit(":", 1)
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((host, int(port)))
        s.listen(16)
        s.setblocking(False)
        self._listener = s

    @property
    def listen_port(self) -> int | None:
        return self._listener.getsockname()[1] if self._listener else None

    def connect(self, peer: int, address: str | None = None) -> Endpoint:
        """Create (or return) the endpoint toward peer.

        Loopback peers resolve inside the process group. TCP peers are
        dialed at the configured (or given) address; the hello goes out
        immediately and the peer's reply is consumed by progress().
        """
        ep = self.endpoints.get(peer)
        if ep is not None:
            return ep
        link = self.cfg.link_between(self.id, peer)
        ep = Endpoint(self, peer, link)
        if self.group.backend == "loopback":
            if peer not in self.group.workers:
                raise TransportError(f"no loopback worker {peer} in this group")
        else:
            addr = address or self.cfg.addresses.get(peer)
            if addr is None:
                raise TransportError(f"no address configured for worker {peer}")
            host, port = addr.rsplit(":", 1)
            try:
                sock = socket.create_connection(
                    (host, int(port)), timeout=self.cfg.connect_timeout_s
                )
            except OSError as e:
                raise TransportError(f"connect to {addr} failed: {e}") from e
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.sendall(encode_hello(self.layout.digest(), self.id))
            sock.setblocking(False)
            conn = _Conn(sock)
            conn.peer = peer
            self._conns.append(conn)
            ep.conn = conn
        self.endpoints[peer] = ep
        return ep

    # ------------------------------------------------------------------ sends

    def tag_send(self, ep: Endpoint, tag: int, payload, completion=None, length=None) -> None:
        """Non-blocking tagged send. completion fires (on this worker's
        progress) once the payload buffer is reusable."""
        if not 0 <= tag <= FULL_MASK:
            raise ValueError(f"tag 0x{tag:x} outside 64 bits")
        if ep.failed:
            self._fire(completion, Completion(status=TRANSPORT_ERROR, tag=tag,
                                              error=f"endpoint to {ep.peer} failed"))
            return
        if isinstance(payload, (DeviceBuffer, DeviceRegion)):
            region = as_region(payload, length)
            nbytes = region.size
            source = region
        else:
            data = bytes(payload)
            if length is not None:
                if length > len(data):
                    raise ValueError(f"length {length} exceeds payload of {len(data)}")
                data = data[:length]
            nbytes = len(data)
            source = data
        if nbytes > self.cfg.max_message_bytes:
            raise ValueError(
                f"payload of {nbytes} bytes exceeds max message size "
                f"{self.cfg.max_message_bytes}"
            )
        if nbytes <= self.cfg.eager_threshold:
            body = source if isinstance(source, bytes) else source.buffer.read_wire(
                source.offset, source.size
            )
            self._emit(ep, FRAME_EAGER, tag, nbytes, body)
            self._fire(completion, Completion(status=OK, length=nbytes, tag=tag))
        else:
            self._emit(ep, FRAME_RTS, tag, nbytes, b"")
            ep.pending_rdv.setdefault(tag, deque()).append(
                _PendingSend(tag, source, nbytes, completion)
            )
        self.stats["sends"] += 1

    def _emit(self, ep: Endpoint, kind: int, tag: int, length: int, body: bytes) -> None:
        """Stamp, serialize on the wire, and hand a frame to the backend."""
        self.stats[f"tx_{_FRAME_NAMES[kind]}"] += 1
        if self.group.backend == "loopback":
            frame = Frame(kind, tag, length, body if kind in (0, 3) else None, self.id)
            if self.clock.virtual:
                wire_bytes = FRAME_HEADER_BYTES + (len(body) if kind in (0, 3) else 0)
                depart = max(self.clock.now, ep.wire_free)
                ep.wire_free = depart + ep.link.occupancy_ns(wire_bytes)
                frame.arrive_ts = depart + ep.link.transfer_ns(wire_bytes)
            peer = self.group.workers[ep.peer]
            peer.inbound.append(frame)
        else:
            if ep.conn is None or ep.conn.closed:
                ep.failed = True
                raise TransportError(f"no live connection to worker {ep.peer}")
            ep.conn.wbuf += encode_frame(kind, tag, length, body if kind in (0, 3) else b"")

    # --------------------------------------------------------------- receives

    def tag_recv(self, tag: int, mask: int = FULL_MASK, capacity: int = 0,
                 completion=None, sink=None) -> ReceiveRequest:
        """Post a tagged receive; matches queued unexpected frames first."""
        return self._post(tag, mask, capacity, sink, completion, wildcard=False)

    def _post(self, tag, mask, capacity, sink, completion, wildcard) -> ReceiveRequest:
        req = ReceiveRequest(tag, mask, capacity, sink, completion, self._post_seq, wildcard)
        self._post_seq += 1
        for i, frame in enumerate(self.unexpected):
            if req.matches(frame.tag):
                del self.unexpected[i]
                self._absorb(req, frame)
                return req
        self.posted.append(req)
        return req

    def tag_probe(self, tag: int, mask: int = FULL_MASK):
        """Report (tag, length) of the earliest matching unexpected frame."""
        for frame in self.unexpected:
            if (frame.tag & mask) == (tag & mask):
                return frame.tag, frame.length
        return None

    # --------------------------------------------------------------- progress

    def progress(self) -> int:
        """Drain backend I/O, run matching, fire completions. Returns the
        number of completions fired."""
        if self.group.backend == "tcp":
            self._poll_tcp()
        while self.inbound:
            frame = self.inbound.popleft()
            if self.hold is not None and self.hold(frame):
                self._held.append(frame)
                continue
            self._arrived(frame)
        fired = 0
        while self._fired:
            handle, comp = self._fired.popleft()
            if comp.timestamp is None:
                comp.timestamp = self.clock.now
            fired += 1
            if handle is not None:
                deliver(handle, comp)
        self.stats["completions"] += fired
        return fired

    def _fire(self, handle, comp: Completion) -> None:
        self._fired.append((handle, comp))

    def release_held(self) -> None:
        """Requeue frames parked by the hold predicate, in arrival order."""
        self.inbound.extendleft(reversed(self._held))
        self._held.clear()

    @property
    def idle(self) -> bool:
        """No queued arrivals, pending completions, or buffered TCP bytes.
        Frames parked by a hold predicate do not count as work."""
        if self.inbound or self._fired:
            return False
        for conn in self._conns:
            if not conn.closed and (conn.rbuf or conn.wbuf):
                return False
        return True

    def _arrived(self, frame: Frame) -> None:
        frame.seq = self._arrival_seq
        self._arrival_seq += 1
        self.stats[f"rx_{_FRAME_NAMES[frame.kind]}"] += 1
        if frame.kind == FRAME_PULL:
            self._serve_pull(frame)
            return
        if frame.kind == FRAME_PAYLOAD:
            key = (frame.src, frame.tag)
            q = self._pulled.get(key)
            if not q:
                raise TransportError(f"payload with no pending pull: {frame!r}")
            req = q.popleft()
            if not q:
                del self._pulled[key]
            self._absorb(req, frame)
            return
        # eager or rts: run the matching engine
        for i, req in enumerate(self.posted):
            if req.matches(frame.tag):
                del self.posted[i]
                self._absorb(req, frame)
                return
        self.unexpected.append(frame)

    def _absorb(self, req: ReceiveRequest, frame: Frame) -> None:
        """A request met a frame: pull, deliver, or truncate."""
        if frame.kind == FRAME_RTS:
            # anchor the request and ask the sender for the payload
            self._pulled.setdefault((frame.src, frame.tag), deque()).append(req)
            if self.clock.virtual:
                self.clock.merge(frame.arrive_ts)
            ep = self.connect(frame.src)
            self._emit(ep, FRAME_PULL, frame.tag, 0, b"")
            return
        ts = self.clock.merge(frame.arrive_ts) if self.clock.virtual else self.clock.now
        if frame.length > req.capacity:
            comp = Completion(
                status=TRUNCATED, length=frame.length, tag=frame.tag, timestamp=ts,
                error=f"frame of {frame.length} bytes exceeds capacity {req.capacity}",
            )
            self._fire(req.completion, comp)
            return
        payload = frame.payload
        out = None
        if req.sink is None:
            out = payload
        elif isinstance(req.sink, (DeviceBuffer, DeviceRegion)):
            region = as_region(req.sink)
            region.buffer.write_wire(payload, region.offset)
        else:
            req.sink[: frame.length] = payload
        if req.wildcard:
            # hand to the machine layer and keep the prepost count stable
            self._post(req.tag, req.mask, req.capacity, None, None, wildcard=True)
            if self.eager_handler is not None:
                self.eager_handler(frame.tag, payload, ts)
            else:
                self.eager_inbox.append((frame.tag, payload, ts))
            self.stats["eager_delivered"] += 1
            return
        self._fire(
            req.completion,
            Completion(status=OK, length=frame.length, tag=frame.tag, timestamp=ts, payload=out),
        )

    def _serve_pull(self, frame: Frame) -> None:
        ep = self.connect(frame.src)
        q = ep.pending_rdv.get(frame.tag)
        if not q:
            raise TransportError(f"pull for unknown rendezvous: {frame!r}")
        pending = q.popleft()
        if not q:
            del ep.pending_rdv[frame.tag]
        if self.clock.virtual:
            self.clock.merge(frame.arrive_ts)
        body = (
            pending.source
            if isinstance(pending.source, bytes)
            else pending.source.buffer.read_wire(pending.source.offset, pending.source.size)
        )
        self._emit(ep, FRAME_PAYLOAD, pending.tag, pending.length, body)
        self._fire(pending.completion, Completion(status=OK, length=pending.length, tag=pending.tag))

    # -------------------------------------------------------------- tcp guts

    def _poll_tcp(self) -> None:
        if self._listener is not None:
            while True:
                try:
                    sock, _ = self._listener.accept()
                except BlockingIOError:
                    break
                except OSError:
                    break
                sock.setblocking(False)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._conns.append(_Conn(sock))
        for conn in list(self._conns):
            self._pump_conn(conn)

    def _pump_conn(self, conn: _Conn) -> None:
        if conn.closed:
            return
        # read whatever is available; an EOF still lets already-received
        # bytes parse below, so an orderly peer close drops no frames
        eof = False
        while True:
            try:
                chunk = conn.sock.recv(1 << 16)
            except BlockingIOError:
                break
            except OSError:
                eof = True
                break
            if chunk == b"":
                eof = True
                break
            conn.rbuf += chunk
            if len(chunk) < (1 << 16):
                break
        # handshake first
        if not conn.hello_done and len(conn.rbuf) >= HELLO_BYTES:
            digest, peer_id = parse_hello(bytes(conn.rbuf[:HELLO_BYTES]))
            del conn.rbuf[:HELLO_BYTES]
            ours = self.layout.digest()
            if digest != ours:
                conn.sock.close()
                conn.closed = True
                raise LayoutMismatchError(
                    f"tag layout digest mismatch: ours 0x{ours:016x}, "
                    f"peer {peer_id} sent 0x{digest:016x}"
                )
            conn.hello_done = True
            if conn.peer is None:
                # inbound connection: now we know who it is; greet back
                conn.peer = peer_id
                conn.wbuf += encode_hello(ours, self.id)
                ep = self.endpoints.get(peer_id)
                if ep is None:
                    ep = Endpoint(self, peer_id, self.cfg.link_between(self.id, peer_id))
                    self.endpoints[peer_id] = ep
                ep.conn = conn
            elif conn.peer != peer_id:
                self._conn_failed(conn)
                raise TransportError(
                    f"dialed worker {conn.peer}, but {peer_id} answered"
                )
        if conn.hello_done:
            while len(conn.rbuf) >= FRAME_HEADER_BYTES:
                magic, kind, tag, length = _HEADER.unpack_from(conn.rbuf, 0)
                if magic != MAGIC:
                    self._conn_failed(conn)
                    raise TransportError(f"bad frame magic {magic!r} from worker {conn.peer}")
                body_len = length if kind in (FRAME_EAGER, FRAME_PAYLOAD) else 0
                if len(conn.rbuf) < FRAME_HEADER_BYTES + body_len:
                    break
                body = bytes(conn.rbuf[FRAME_HEADER_BYTES : FRAME_HEADER_BYTES + body_len])
                del conn.rbuf[: FRAME_HEADER_BYTES + body_len]
                self.inbound.append(Frame(kind, tag, length, body if kind in (0, 3) else None,
                                          conn.peer))
        if eof:
            self._conn_failed(conn)
            return
        # flush writes; tagged frames wait until the peer's digest checked out
        if conn.wbuf and conn.hello_done:
            try:
                n = conn.sock.send(conn.wbuf)
                del conn.wbuf[:n]
            except BlockingIOError:
                pass
            except OSError:
                self._conn_failed(conn)

    def _conn_failed(self, conn: _Conn) -> None:
        if conn.closed:
            return
        conn.closed = True
        try:
            conn.sock.close()
        except OSError:
            pass
        for ep in self.endpoints.values():
            if ep.conn is conn:
                ep.failed = True
                for q in ep.pending_rdv.values():
                    for pending in q:
                        self._fire(
                            pending.completion,
                            Completion(status=TRANSPORT_ERROR, tag=pending.tag,
                                       error=f"peer {ep.peer} disconnected"),
                        )
                ep.pending_rdv.clear()
        # receives parked on a pull from that peer will never complete
        if conn.peer is not None:
            for (src, tag), q in list(self._pulled.items()):
                if src == conn.peer:
                    for req in q:
                        self._fire(
                            req.completion,
                            Completion(status=TRANSPORT_ERROR, tag=tag,
                                       error=f"peer {src} disconnected mid-rendezvous"),
                        )
                    del self._pulled[(src, tag)]

    def close(self) -> None:
        for conn in self._conns:
            if not conn.closed:
                conn.closed = True
                try:
                    conn.sock.close()
                except OSError:
                    pass
        if self._listener is not None:
            self._listener.close()
            self._listener = None


class TransportGroup:
    """Process-local context: workers, clocks, and the shared device space."""

    def __init__(self, cfg: RuntimeConfig | None = None, backend: str = "loopback"):
        if backend not in ("loopback", "tcp"):
            raise StartupError(f"unknown backend {backend!r}")
        self.cfg = cfg or RuntimeConfig()
        self.backend = backend
        self.layout = TagLayout.from_spec(self.cfg.tag_layout)
        self.workers: dict[int, Worker] = {}
        self.clocks: dict[int, object] = {}
        self._device_space: DeviceSpace | None = None

    def create_worker(self, worker_id: int, listen: str | None = None) -> Worker:
        if worker_id in self.workers:
            raise StartupError(f"duplicate worker id {worker_id} in process group")
        self.clocks[worker_id] = make_clock(self.cfg.time_mode)
        w = Worker(self, worker_id)
        self.workers[worker_id] = w
        if self.backend == "tcp":
            addr = listen or self.cfg.addresses.get(worker_id)
            if addr:
                w.listen(addr)
        return w

    @property
    def device_space(self) -> DeviceSpace:
        if self._device_space is None:
            self._device_space = DeviceSpace(
                self.cfg.copy_model, self.clocks, self.cfg.device_capacity
            )
        return self._device_space

    def close(self) -> None:
        for w in self.workers.values():
            w.close()
