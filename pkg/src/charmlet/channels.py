"""Streamed chare-to-chare channels with zero per-message envelopes.

Both endpoints construct the channel with the same id and name each
other. Tags are derived, never exchanged: each direction owns a counter,
so the kth send in a direction and the kth receive posted for it carry
the same tag and meet in the transport's matching engine. Direction 0
belongs to the endpoint whose (collection, element, PE) triple sorts
lower; a channel from a chare to itself uses direction 0 both ways.

Sends and receives return futures fulfilled with the transfer's
completion record. Payloads and sinks may live in host or device memory
interchangeably.
"""

from __future__ import annotations

from .completion import Callback, Future
from .tags import TagError


class ChannelError(RuntimeError):
    pass


def _as_handle(pe, completion):
    if completion is None:
        return Future()
    if isinstance(completion, Callback):
        return lambda value: pe.runtime._deliver(pe, completion, value)
    return completion


class Channel:
    """One endpoint of a bidirectional chare-to-chare stream."""

    __slots__ = ("pe", "channel_id", "local", "peer", "_ep", "_send_dir",
                 "_send_ctr", "_recv_ctr", "_limit", "_reg_key")

    def __init__(self, pe, channel_id: int, local, peer):
        layout = pe.worker.layout
        if not 0 <= channel_id < (1 << layout.channel_id_bits):
            raise ChannelError(f"channel id {channel_id} outside "
                               f"{layout.channel_id_bits} bits")
        # both endpoints of one channel may live on this PE, so the
        # duplicate check is per local endpoint, not per id alone
        self._reg_key = (channel_id, local.collection, local.element)
        if self._reg_key in pe.channel_ids:
            raise ChannelError(f"channel id {channel_id} already open on PE {pe.index} "
                               f"for chare ({local.collection}, {local.element})")
        pe.channel_ids.add(self._reg_key)
        self.pe = pe
        self.channel_id = channel_id
        self.local = local
        self.peer = peer
        self._ep = pe.worker.connect(peer.home_pe)
        mine = (local.collection, local.element, local.home_pe)
        theirs = (peer.collection, peer.element, peer.home_pe)
        # self-channels keep direction 0 for both roles
        self._send_dir = 0 if mine <= theirs else 1
        self._send_ctr = 0
        self._recv_ctr = 0
        self._limit = 1 << (layout.channel_counter_bits - 1)

    def _tag(self, direction: int, counter: int) -> int:
        if counter >= self._limit:
            raise ChannelError(
                f"channel {self.channel_id} exhausted its counter "
                f"({self._limit} transfers in one direction)"
            )
        try:
            return self.pe.worker.layout.encode_channel(self.channel_id, direction, counter)
        except TagError as e:
            raise ChannelError(str(e)) from e

    def send(self, data, size=None, completion=None):
        """Stream the next payload toward the peer; the returned handle
        fires when the source buffer is reusable."""
        handle = _as_handle(self.pe, completion)
        tag = self._tag(self._send_dir, self._send_ctr)
        self._send_ctr += 1
        self.pe.worker.tag_send(self._ep, tag, data, completion=handle, length=size)
        return handle

    def recv(self, sink, size=None, completion=None):
        """Post the receive for the peer's next payload into ``sink``."""
        handle = _as_handle(self.pe, completion)
        recv_dir = self._send_dir if self.local == self.peer else 1 - self._send_dir
        tag = self._tag(recv_dir, self._recv_ctr)
        self._recv_ctr += 1
        if isinstance(sink, (bytearray, memoryview)):
            capacity = len(sink) if size is None else size
            target = sink
        else:
            from .devicesim import as_region

            target = as_region(sink, size)
            capacity = target.size
        self.pe.worker.tag_recv(tag, capacity=capacity, sink=target, completion=handle)
        return handle

    def close(self) -> None:
        self.pe.channel_ids.discard(self._reg_key)
