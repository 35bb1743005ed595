"""Completion plumbing shared by the transport and the runtime.

A completion handle is either a Future (single-assignment slot, waitable
from suspended entry methods) or a Callback (an entry-method target that
gets enqueued with the completion value). The transport and device layers
only ever call ``complete(value)`` / ``fail(error)`` on whatever handle
they were given, so plain callables work there too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

OK = "ok"
TRUNCATED = "truncated"
TRANSPORT_ERROR = "transport-error"


@dataclass
class Completion:
    """Result record delivered to receive/send completions."""

    status: str = OK
    length: int = 0
    tag: int = 0
    timestamp: int | None = None  # filled at fire time if unset
    payload: bytes | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == OK


class FutureError(RuntimeError):
    pass


class Future:
    """Single-assignment slot.

    Fulfilling wakes exactly one waiter (the suspended entry that yielded
    it); extra listeners are a usage error, as is double fulfillment.
    """

    __slots__ = ("_value", "_done", "_waiter", "_failed", "ref")

    def __init__(self):
        self._value = None
        self._done = False
        self._failed = False
        self._waiter = None
        self.ref = None  # FutureRef once registered with a PE

    @property
    def done(self) -> bool:
        return self._done

    @property
    def value(self):
        if not self._done:
            raise FutureError("future not fulfilled yet")
        if self._failed:
            raise FutureError(f"future failed: {self._value}")
        return self._value

    def complete(self, value=None) -> None:
        if self._done:
            raise FutureError("future already fulfilled")
        self._value = value
        self._done = True
        if self._waiter is not None:
            w, self._waiter = self._waiter, None
            w(self)

    def fail(self, error) -> None:
        if self._done:
            raise FutureError("future already fulfilled")
        self._failed = True
        self._value = error
        self._done = True
        if self._waiter is not None:
            w, self._waiter = self._waiter, None
            w(self)

    def on_done(self, fn) -> None:
        """Register the single waiter; fires immediately if already done."""
        if self._done:
            fn(self)
            return
        if self._waiter is not None:
            raise FutureError("future already has a waiter")
        self._waiter = fn

    # convenience for callable-style completion sites
    def __call__(self, value=None):
        self.complete(value)


class CountingFuture(Future):
    """Fulfills once ``count`` contributions arrive (halo-exchange style)."""

    __slots__ = ("_need", "_got", "_parts")

    def __init__(self, count: int):
        super().__init__()
        if count < 0:
            raise ValueError("count must be >= 0")
        self._need = count
        self._got = 0
        self._parts = []
        if count == 0:
            super().complete(self._parts)

    def contribute(self, part=None) -> None:
        if self.done:
            raise FutureError("counting future already fulfilled")
        self._got += 1
        self._parts.append(part)
        if self._got == self._need:
            super().complete(self._parts)

    # a CountingFuture used as a completion handle counts each completion
    def complete(self, value=None):
        self.contribute(value)

    def __call__(self, value=None):
        self.contribute(value)


@dataclass(frozen=True, order=True)
class ChareId:
    """Stable address of one chare: collection, element, and owning PE."""

    collection: int
    element: int
    home_pe: int


@dataclass(frozen=True)
class Callback:
    """Entry-method completion target: deliverable through envelopes.

    ``extra`` is prepended to the completion value when the target entry
    is invoked.
    """

    target: ChareId
    entry: str
    extra: tuple = field(default=())


@dataclass(frozen=True)
class FutureRef:
    """Wire-safe handle to a future living on some PE of this process."""

    pe: int
    fid: int


def deliver(handle, value) -> None:
    """Complete any completion handle (Future, callable, or None)."""
    if handle is None:
        return
    if isinstance(handle, Future):
        handle.complete(value)
    else:
        handle(value)


def deliver_error(handle, completion: Completion) -> None:
    if handle is None:
        return
    if isinstance(handle, Future):
        handle.complete(completion)  # error status rides in the record
    else:
        handle(completion)
