"""Device-payload messaging: tagged sends decoupled from envelopes.

A device argument never rides inside the metadata envelope. The sender
issues a tagged transport send for the payload (device kind, source PE,
a per-PE counter that strictly increases), then ships the envelope with
a (tag, size) descriptor per payload. How the receiver turns descriptors
into posted receives depends on who consumes them:

  CHARM    the regular entry is deferred; a post entry runs first and
           binds a destination buffer to each descriptor, the runtime
           posts the receives, and the regular entry is enqueued once
           every payload has landed.
  MPI      the descriptor travels in host arguments; the facade posts
           the receive itself after its own (source, tag) match.
  BINDING  an external client posts the receive through the wire
           protocol; only the tag discipline is shared.

Regular entries gated behind payloads stay ordered per (source PE,
target chare): a later small payload cannot move its entry ahead of an
earlier larger one.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .completion import OK, Completion
from .devicesim import as_region
from .serde import DevSlot
from .tags import DEVICE

CHARM = "charm"
MPI = "mpi"
BINDING = "binding"


@dataclass(frozen=True)
class DeviceDescriptor:
    """What the envelope says about one out-of-band payload."""

    tag: int
    size: int


def device_send(pe, dest_pe: int, data, size=None, completion=None) -> DeviceDescriptor:
    """Send one device (or host) payload ahead of its envelope.

    Returns the descriptor the envelope must carry. The completion fires
    when the source buffer is reusable.
    """
    if isinstance(data, (bytes, bytearray, memoryview)):
        payload = bytes(data) if size is None else bytes(data)[:size]
        nbytes = len(payload)
    else:
        payload = as_region(data, size)
        nbytes = payload.size
    tag = pe.worker.layout.encode_messaging(DEVICE, pe.index, pe.next_device_counter())
    ep = pe.worker.connect(dest_pe)
    pe.worker.tag_send(ep, tag, payload, completion=completion)
    return DeviceDescriptor(tag, nbytes)


def device_recv(pe, descriptor: DeviceDescriptor, data, size=None,
                receiver_type: str = MPI, completion=None):
    """Post the receive for one described payload into ``data``.

    Used by the MPI facade and the external binding, where the caller
    owns buffer choice. Chare entries go through begin_receive instead.
    """
    if receiver_type not in (CHARM, MPI, BINDING):
        raise ValueError(f"unknown receiver type {receiver_type!r}")
    if isinstance(data, (bytearray, memoryview)):
        sink = data
        capacity = len(data) if size is None else size
    else:
        sink = as_region(data, size)
        capacity = sink.size
    return pe.worker.tag_recv(
        descriptor.tag, capacity=capacity, sink=sink, completion=completion
    )


class DeviceRecvOp:
    """One descriptor handed to a post entry for binding.

    ``size`` is the announced payload size; ``bind`` names where the
    bytes should land. Leaving an op unbound aborts the run.
    """

    __slots__ = ("tag", "size", "region")

    def __init__(self, tag: int, size: int):
        self.tag = tag
        self.size = size
        self.region = None

    def bind(self, data, size=None) -> None:
        self.region = as_region(data, size)

    def __repr__(self):
        state = "bound" if self.region is not None else "unbound"
        return f"DeviceRecvOp(size={self.size}, {state})"


class _GatedEntry:
    __slots__ = ("chare", "spec", "args", "ops", "remaining", "ready")

    def __init__(self, chare, spec, args, ops):
        self.chare = chare
        self.spec = spec
        self.args = args
        self.ops = ops
        self.remaining = len(ops)
        self.ready = False


def substitute_slots(args: tuple, lookup) -> tuple:
    """Replace DevSlot markers (also inside tuples/lists) via lookup."""
    out = []
    for a in args:
        if isinstance(a, DevSlot):
            out.append(lookup(a.index))
        elif isinstance(a, tuple):
            out.append(substitute_slots(a, lookup))
        elif isinstance(a, list):
            out.append(list(substitute_slots(tuple(a), lookup)))
        else:
            out.append(a)
    return tuple(out)


def begin_receive(pe, chare, spec, args: tuple, env) -> None:
    """CHARM-side handling of an envelope that describes device payloads.

    Runs the post entry now, posts one receive per descriptor, and gates
    the regular entry until all payloads have landed, in send order per
    (source PE, chare).
    """
    ops = [DeviceRecvOp(tag, size) for tag, size in env.descriptors]
    post_args = substitute_slots(args, lambda i: ops[i])
    try:
        result = spec.post_fn(chare, *post_args)
    except Exception as e:
        pe.runtime._abort(pe, f"post entry for '{spec.qualname}' raised: {e!r}", cause=e)
        return
    if result is not None and hasattr(result, "send"):
        pe.runtime._abort(pe, f"post entry for '{spec.qualname}' must bind synchronously, "
                              "not suspend")
        return
    for i, op in enumerate(ops):
        if op.region is None:
            pe.runtime._abort(
                pe, f"post entry for '{spec.qualname}' left device argument {i} unbound"
            )
            return

    gated = _GatedEntry(chare, spec, args, ops)
    key = (env.src_pe, env.collection, env.element)
    gate = pe.dev_gates.setdefault(key, deque())
    gate.append(gated)
    for op in ops:
        pe.worker.tag_recv(
            op.tag,
            capacity=op.region.size,
            sink=op.region,
            completion=_PayloadDone(pe, key, gated, op),
        )


class _PayloadDone:
    __slots__ = ("pe", "key", "gated", "op")

    def __init__(self, pe, key, gated, op):
        self.pe = pe
        self.key = key
        self.gated = gated
        self.op = op

    def __call__(self, comp: Completion) -> None:
        pe, gated = self.pe, self.gated
        if comp.status != OK:
            pe.runtime._abort(
                pe,
                f"device payload for '{gated.spec.qualname}' failed: "
                f"{comp.error or comp.status}",
            )
            return
        gated.remaining -= 1
        if gated.remaining == 0:
            gated.ready = True
            gate = pe.dev_gates.get(self.key)
            while gate and gate[0].ready:
                g = gate.popleft()
                regular = substitute_slots(g.args, lambda i: g.ops[i].region)
                pe.enqueue_invoke(g.chare, g.spec, regular)
            if gate is not None and not gate:
                del pe.dev_gates[self.key]
