"""Chare runtime: registration, envelopes, and the cooperative scheduler.

Every PE owns a transport worker, a task queue, and the chares placed on
it. Entry-method invocations travel as envelopes; the machine layer maps
an envelope onto the transport by size. Small envelopes go out under an
eager-kind tag and land in one of the preposted wildcard receives. Large
envelopes go out under a probe-kind tag; the receiving PE notices the
header while polling, posts an exact receive, and the payload is pulled
over. Mixing both shapes can reorder arrivals between a PE pair, so
envelopes carry a per-destination sequence number and the receiver
releases them back into send order.

Entry methods may be plain functions or generators. A generator entry
suspends by yielding a Future and resumes on a later scheduler turn once
it completes; nothing else on the PE blocks meanwhile. Exceptions that
escape an entry abort the whole runtime, naming the PE and the entry.
"""

from __future__ import annotations

import struct
import time
from collections import Counter, deque
from types import GeneratorType

from . import devmsg
from .completion import (
    OK,
    Callback,
    ChareId,
    Completion,
    CountingFuture,
    Future,
    FutureRef,
    deliver,
)
from .config import RuntimeConfig
from .devicesim import as_region
from .serde import DevSlot, pack_args, unpack_args
from .tags import EAGER, PROBE
from .transport import TransportGroup

_ENV_HEADER = struct.Struct("<IIiiHHI")  # src, seq, coll, elem, entry, ndev, hostlen
_ENV_DESC = struct.Struct("<QQ")  # tag, size


class RuntimeAbort(RuntimeError):
    """Fatal runtime failure (entry panic, dispatch error, bad binding)."""


class RegistrationError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


def entry(fn):
    """Mark a chare method as remotely invokable."""
    fn._charm_entry = True
    return fn


class EntrySpec:
    __slots__ = ("index", "name", "fn", "post_fn", "qualname")

    def __init__(self, index, name, fn, post_fn, qualname):
        self.index = index
        self.name = name
        self.fn = fn
        self.post_fn = post_fn
        self.qualname = qualname


class ChareType:
    """Registration record: a chare class and its dense entry table."""

    __slots__ = ("cls", "entries", "by_name")

    def __init__(self, cls):
        self.cls = cls
        self.entries: list[EntrySpec] = []
        self.by_name: dict[str, EntrySpec] = {}
        seen = set()
        for klass in reversed(cls.__mro__):
            for name, member in vars(klass).items():
                if name in seen or not getattr(member, "_charm_entry", False):
                    continue
                if name.startswith("post_"):
                    continue  # post entries ride along with their regular entry
                seen.add(name)
                fn = getattr(cls, name)
                post = getattr(cls, "post_" + name, None)
                spec = EntrySpec(len(self.entries), name, fn, post,
                                 f"{cls.__name__}.{name}")
                self.entries.append(spec)
                self.by_name[name] = spec


class DeviceArg:
    """Wraps a device buffer (or region) argument so it travels as a
    tagged payload instead of inside the envelope."""

    __slots__ = ("region",)

    def __init__(self, data, size=None):
        self.region = as_region(data, size)


class Envelope:
    __slots__ = ("src_pe", "seq", "collection", "element", "entry_idx",
                 "descriptors", "host_args")

    def __init__(self, src_pe, seq, collection, element, entry_idx,
                 descriptors, host_args):
        self.src_pe = src_pe
        self.seq = seq
        self.collection = collection
        self.element = element
        self.entry_idx = entry_idx
        self.descriptors = descriptors  # tuple of (tag, size)
        self.host_args = host_args

    def encode(self) -> bytes:
        out = bytearray(
            _ENV_HEADER.pack(self.src_pe, self.seq, self.collection, self.element,
                             self.entry_idx, len(self.descriptors), len(self.host_args))
        )
        for tag, size in self.descriptors:
            out += _ENV_DESC.pack(tag, size)
        out += self.host_args
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes) -> "Envelope":
        src, seq, coll, elem, entry_idx, ndev, hostlen = _ENV_HEADER.unpack_from(data, 0)
        pos = _ENV_HEADER.size
        descriptors = []
        for _ in range(ndev):
            descriptors.append(_ENV_DESC.unpack_from(data, pos))
            pos += _ENV_DESC.size
        host = bytes(data[pos : pos + hostlen])
        return cls(src, seq, coll, elem, entry_idx, tuple(descriptors), host)


class Proxy:
    """Send-side handle: attribute access names the target entry."""

    __slots__ = ("_pe", "id")

    def __init__(self, pe, chare_id: ChareId):
        self._pe = pe
        self.id = chare_id

    def __getattr__(self, name):
        if name.startswith("__"):
            raise AttributeError(name)
        pe, cid = self._pe, self.id

        def send(*args):
            pe.runtime._send_entry(pe, cid, name, args)

        send.__name__ = name
        return send


class Chare:
    """Base class for remotely invokable objects.

    The runtime fills in ``id`` and the owning PE before __init__ runs,
    so constructors can already allocate device memory or make proxies.
    """

    id: ChareId = None
    _pe = None

    @property
    def mype(self) -> int:
        return self._pe.index

    @property
    def npes(self) -> int:
        return len(self._pe.runtime._pes)

    @property
    def index(self) -> int:
        return self.id.element

    @property
    def runtime(self) -> "Runtime":
        return self._pe.runtime

    @property
    def now(self) -> int:
        """This PE's clock in nanoseconds (virtual or wall)."""
        return self._pe.worker.clock.now

    def proxy(self, chare_id: ChareId) -> Proxy:
        return Proxy(self._pe, chare_id)

    def future(self, count: int | None = None) -> Future:
        return self._pe.new_future(count)

    def fulfill(self, handle, value=None) -> None:
        """Complete a Future, FutureRef, or Callback with value."""
        self._pe.runtime._deliver(self._pe, handle, value)

    def device_alloc(self, size: int):
        return self._pe.runtime.device.alloc(self._pe.index, size)

    def device_send(self, dest: ChareId | int, data, size=None, completion=None):
        dest_pe = dest.home_pe if isinstance(dest, ChareId) else dest
        return devmsg.device_send(self._pe, dest_pe, data, size, completion)

    def channel(self, channel_id: int, peer: ChareId):
        from .channels import Channel

        return Channel(self._pe, channel_id, self.id, peer)

    def stop(self) -> None:
        self._pe.runtime.stop()


class Pe:
    """One scheduler lane: a transport worker plus its local chares."""

    def __init__(self, runtime: "Runtime", index: int, worker):
        self.runtime = runtime
        self.index = index
        self.worker = worker
        self.chares: dict[tuple[int, int], Chare] = {}
        self.queue: deque = deque()
        self.futures: dict[int, Future] = {}
        self._next_fid = 1
        self.seq_out: dict[int, int] = {}  # dst pe -> next seq
        self.seq_in: dict[int, int] = {}  # src pe -> expected seq
        self.held: dict[int, dict[int, Envelope]] = {}  # src -> seq -> envelope
        self.dev_gates: dict = {}
        self.channel_ids: set[int] = set()
        self._machine_ctr = 0
        self._device_ctr = 0
        self.stats: Counter = Counter()
        worker.eager_handler = self._on_eager

    # ------------------------------------------------------------- plumbing

    def new_future(self, count: int | None = None) -> Future:
        fut = Future() if count is None else CountingFuture(count)
        fid = self._next_fid
        self._next_fid += 1
        self.futures[fid] = fut
        fut.ref = FutureRef(self.index, fid)
        return fut

    def next_device_counter(self) -> int:
        c = self._device_ctr
        self._device_ctr += 1
        return c

    def _next_machine_tag(self, kind: int) -> int:
        layout = self.worker.layout
        c = self._machine_ctr & ((1 << layout.counter_bits) - 1)
        self._machine_ctr += 1
        return layout.encode_messaging(kind, self.index, c)

    def enqueue_invoke(self, chare, spec, args) -> None:
        self.queue.append(("invoke", chare, spec, args))

    # -------------------------------------------------------------- ingest

    def _on_eager(self, tag, payload, ts) -> None:
        self._ingest(Envelope.decode(payload))

    def _on_probed(self, comp: Completion) -> None:
        if comp.status != OK:
            self.runtime._abort(self, f"envelope receive failed: {comp.error or comp.status}")
            return
        self._ingest(Envelope.decode(comp.payload))

    def _ingest(self, env: Envelope) -> None:
        """Restore per-source send order before queueing for dispatch."""
        src = env.src_pe
        expected = self.seq_in.get(src, 0)
        if env.seq != expected:
            self.held.setdefault(src, {})[env.seq] = env
            return
        self.queue.append(("env", env))
        expected = (expected + 1) & 0xFFFFFFFF
        parked = self.held.get(src)
        while parked and expected in parked:
            self.queue.append(("env", parked.pop(expected)))
            expected = (expected + 1) & 0xFFFFFFFF
        if parked is not None and not parked:
            del self.held[src]
        self.seq_in[src] = expected

    def _sweep_probe(self) -> bool:
        """Claim any large-envelope headers sitting in the unexpected queue."""
        layout = self.worker.layout
        template = layout.kind_template(PROBE)
        mask = layout.kind_mask
        hit = False
        while True:
            probed = self.worker.tag_probe(template, mask)
            if probed is None:
                return hit
            tag, length = probed
            self.worker.tag_recv(tag, capacity=length, completion=self._on_probed)
            hit = True

    # ------------------------------------------------------------- dispatch

    def step(self) -> bool:
        worked = self.worker.progress() > 0
        worked = self._sweep_probe() or worked
        n = len(self.queue)
        for _ in range(n):
            task = self.queue.popleft()
            kind = task[0]
            if kind == "env":
                self._dispatch(task[1])
            elif kind == "invoke":
                _, chare, spec, args = task
                self._invoke(chare, spec, args)
            else:  # resume
                _, spec, gen, fut = task
                self._drive(spec, gen, fut)
            if self.runtime._fatal is not None:
                break
        return worked or n > 0

    def _dispatch(self, env: Envelope) -> None:
        chare = self.chares.get((env.collection, env.element))
        if chare is None:
            self.runtime._abort(
                self, f"no chare ({env.collection}, {env.element}) on this PE"
            )
            return
        ctype = self.runtime._collections[env.collection][0]
        if not 0 <= env.entry_idx < len(ctype.entries):
            self.runtime._abort(
                self,
                f"unknown entry id {env.entry_idx} for {ctype.cls.__name__} "
                f"(has {len(ctype.entries)})",
            )
            return
        spec = ctype.entries[env.entry_idx]
        args = unpack_args(env.host_args)
        self.stats["dispatches"] += 1
        if env.descriptors:
            if spec.post_fn is None:
                self.runtime._abort(
                    self,
                    f"entry '{spec.qualname}' got device arguments but has no "
                    f"post_{spec.name} entry",
                )
                return
            devmsg.begin_receive(self, chare, spec, args, env)
        else:
            self._invoke(chare, spec, args)

    def _invoke(self, chare, spec, args) -> None:
        try:
            result = spec.fn(chare, *args)
        except Exception as e:
            self.runtime._abort(self, f"entry '{spec.qualname}' raised: {e!r}", cause=e)
            return
        if isinstance(result, GeneratorType):
            self._drive(spec, result, None)

    def _drive(self, spec, gen, fut) -> None:
        """Advance a generator entry until it suspends or finishes."""
        value, exc = None, None
        if fut is not None:
            try:
                value = fut.value
            except Exception as e:
                exc = e
        while True:
            try:
                yielded = gen.throw(exc) if exc is not None else gen.send(value)
            except StopIteration:
                return
            except Exception as e:
                self.runtime._abort(self, f"entry '{spec.qualname}' raised: {e!r}", cause=e)
                return
            if not isinstance(yielded, Future):
                self.runtime._abort(
                    self,
                    f"entry '{spec.qualname}' yielded {type(yielded).__name__}, "
                    "entries may only wait on futures",
                )
                return
            if yielded.done:
                value, exc = None, None
                try:
                    value = yielded.value
                except Exception as e:
                    exc = e
                continue
            yielded.on_done(_Resumer(self, spec, gen))
            return


class _Resumer:
    """Queues a suspended generator back onto its PE when a future fires."""

    __slots__ = ("pe", "spec", "gen")

    def __init__(self, pe, spec, gen):
        self.pe = pe
        self.spec = spec
        self.gen = gen

    def __call__(self, fut):
        self.pe.queue.append(("resume", self.spec, self.gen, fut))


class Runtime:
    """Owns the PEs and drives them round-robin until quiescence or stop."""

    def __init__(self, cfg: RuntimeConfig | None = None, backend: str = "loopback"):
        self.cfg = cfg or RuntimeConfig()
        self.backend = backend
        self._types: dict[type, ChareType] = {}
        self._collections: list[tuple[ChareType, int]] = []
        self._pending_creates: list = []
        self._seeds: list = []
        self._pes: list[Pe] = []
        self._group: TransportGroup | None = None
        self._started = False
        self._stopped = False
        self._fatal: RuntimeAbort | None = None

    # ------------------------------------------------------------ assembly

    def register(self, cls) -> ChareType:
        if self._started:
            raise RegistrationError("cannot register chare types after start")
        if not (isinstance(cls, type) and issubclass(cls, Chare)):
            raise RegistrationError(f"{cls!r} is not a Chare subclass")
        if cls in self._types:
            raise RegistrationError(f"{cls.__name__} is already registered")
        ctype = ChareType(cls)
        self._types[cls] = ctype
        return ctype

    def create(self, cls, n: int = 1, args=(), args_fn=None, placement=None) -> list[ChareId]:
        """Declare a collection of n chares; instantiated at start.

        placement maps element -> PE (callable or list); default is
        round-robin. args_fn(element) -> tuple overrides args per element.
        """
        if self._started:
            raise RegistrationError("cannot create collections after start")
        ctype = self._types.get(cls)
        if ctype is None:
            raise RegistrationError(f"{cls.__name__} is not registered")
        if n < 1:
            raise UsageError("collection needs at least one element")
        collection = len(self._collections)
        self._collections.append((ctype, n))
        homes = []
        for i in range(n):
            if placement is None:
                home = i % self.cfg.workers
            elif callable(placement):
                home = placement(i)
            else:
                home = placement[i]
            if not 0 <= home < self.cfg.workers:
                raise UsageError(f"placement {home} outside 0..{self.cfg.workers - 1}")
            homes.append(home)
        ids = [ChareId(collection, i, homes[i]) for i in range(n)]
        self._pending_creates.append((ctype, ids, args, args_fn))
        return ids

    def launch(self, chare_id: ChareId, entry_name: str, *args) -> None:
        """Queue a seed invocation; delivered when the scheduler runs."""
        if self._started:
            self._send_entry(self._pes[chare_id.home_pe], chare_id, entry_name, args)
        else:
            self._seeds.append((chare_id, entry_name, args))

    def start(self) -> None:
        if self._started:
            raise RegistrationError("runtime already started")
        self._group = TransportGroup(self.cfg, backend=self.backend)
        workers = [self._group.create_worker(i) for i in range(self.cfg.workers)]
        self._pes = [Pe(self, i, w) for i, w in enumerate(workers)]
        if self.backend == "loopback":
            for w in workers:
                for peer in range(self.cfg.workers):
                    w.connect(peer)
        for ctype, ids, args, args_fn in self._pending_creates:
            for cid in ids:
                pe = self._pes[cid.home_pe]
                obj = ctype.cls.__new__(ctype.cls)
                obj.id = cid
                obj._pe = pe
                obj.__init__(*(args_fn(cid.element) if args_fn else args))
                pe.chares[(cid.collection, cid.element)] = obj
        self._started = True
        for cid, name, args in self._seeds:
            self._send_entry(self._pes[cid.home_pe], cid, name, args)
        self._seeds.clear()

    # ------------------------------------------------------------- running

    def run(self, until=None, timeout_s: float | None = None) -> None:
        """Drive all PEs. Returns at quiescence, at stop(), or once the
        ``until`` predicate turns true."""
        if not self._started:
            self.start()
        self._stopped = False
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        while True:
            worked = 0
            for pe in self._pes:
                if pe.step():
                    worked += 1
            if self._fatal is not None:
                fatal, self._fatal = self._fatal, None
                raise fatal
            if self._stopped:
                return
            if until is not None and until():
                return
            if worked == 0:
                if until is None and self._idle():
                    return
                if deadline is not None and time.monotonic() > deadline:
                    raise UsageError("runtime.run timed out")
                if self.backend == "tcp":
                    time.sleep(0.0002)

    def stop(self) -> None:
        self._stopped = True

    def _idle(self) -> bool:
        return all(not pe.queue and pe.worker.idle for pe in self._pes)

    def _abort(self, pe, message: str, cause=None) -> None:
        if self._fatal is None:
            err = RuntimeAbort(f"PE {pe.index}: {message}")
            if cause is not None:
                err.__cause__ = cause
            self._fatal = err

    # ------------------------------------------------------------- sending

    def _send_entry(self, src_pe: Pe, dest: ChareId, entry_name: str, args: tuple) -> None:
        if not self._started:
            raise UsageError("runtime not started")
        if not 0 <= dest.collection < len(self._collections):
            raise UsageError(f"unknown collection {dest.collection}")
        ctype, size = self._collections[dest.collection]
        spec = ctype.by_name.get(entry_name)
        if spec is None:
            raise UsageError(f"{ctype.cls.__name__} has no entry '{entry_name}'")
        if not 0 <= dest.element < size:
            raise UsageError(f"element {dest.element} outside collection of {size}")

        clean = []
        regions = []
        for a in args:
            if isinstance(a, DeviceArg):
                clean.append(DevSlot(len(regions)))
                regions.append(a.region)
            else:
                clean.append(a)
        descriptors = tuple(
            (d.tag, d.size)
            for d in (devmsg.device_send(src_pe, dest.home_pe, r) for r in regions)
        )
        host = pack_args(tuple(clean))
        src_pe.stats["envelopes_sent"] += 1

        if dest.home_pe == src_pe.index:
            env = Envelope(src_pe.index, 0, dest.collection, dest.element,
                           spec.index, descriptors, host)
            src_pe.queue.append(("env", env))  # still a later scheduler turn
            return
        seq = src_pe.seq_out.get(dest.home_pe, 0)
        src_pe.seq_out[dest.home_pe] = (seq + 1) & 0xFFFFFFFF
        env = Envelope(src_pe.index, seq, dest.collection, dest.element,
                       spec.index, descriptors, host)
        data = env.encode()
        kind = EAGER if len(data) <= self.cfg.eager_threshold else PROBE
        tag = src_pe._next_machine_tag(kind)
        worker = src_pe.worker
        worker.tag_send(worker.connect(dest.home_pe), tag, data)

    def _deliver(self, src_pe: Pe, handle, value) -> None:
        if handle is None:
            return
        if isinstance(handle, Callback):
            self._send_entry(src_pe, handle.target, handle.entry, handle.extra + (value,))
        elif isinstance(handle, FutureRef):
            self._fulfill_ref(handle, value)
        else:
            deliver(handle, value)

    def _fulfill_ref(self, ref: FutureRef, value) -> None:
        if not 0 <= ref.pe < len(self._pes):
            raise UsageError(f"future ref names unknown PE {ref.pe}")
        pe = self._pes[ref.pe]
        fut = pe.futures.get(ref.fid)
        if fut is None:
            raise UsageError(f"future {ref.fid} on PE {ref.pe} is unknown or already done")
        deliver(fut, value)
        if fut.done:
            del pe.futures[ref.fid]

    # ------------------------------------------------------------- access

    def proxy(self, chare_id: ChareId) -> Proxy:
        return Proxy(self._pes[chare_id.home_pe], chare_id)

    def pe(self, index: int) -> Pe:
        return self._pes[index]

    @property
    def device(self):
        return self._group.device_space

    def now(self, pe: int = 0) -> int:
        return self._group.clocks[pe].now

    @property
    def total_dispatches(self) -> int:
        return sum(pe.stats["dispatches"] for pe in self._pes)

    @property
    def total_envelopes_sent(self) -> int:
        return sum(pe.stats["envelopes_sent"] for pe in self._pes)

    def close(self) -> None:
        if self._group is not None:
            self._group.close()
