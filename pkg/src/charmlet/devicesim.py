"""Simulated device memory.

Device allocations live in an opaque address space disjoint from host
memory. Each buffer is backed by ordinary process memory, but the only
sanctioned ways data crosses the host/device boundary are the explicit
copy calls below, which charge the owning worker's clock with
latency + size/bandwidth (busy-wait under a wall clock). The transport
may write received bytes straight into a device buffer at no extra cost;
that asymmetry is what makes device-direct paths cheaper than staging.

Compute on device data is modeled as kernel work: the owner may take a
numpy view of the backing store. Kernel time is not charged.
"""

from __future__ import annotations

import bisect

import numpy as np

from .config import CopyCostModel

# Allocations start here; nothing else in the process hands out integers
# this large as addresses, so accidental host/device mixups fail fast.
_DEVICE_BASE = 0xD0_0000_0000
_ALIGN = 256


class DeviceError(RuntimeError):
    pass


class AllocationError(DeviceError):
    pass


class DeviceBuffer:
    """One device allocation: opaque address, owning worker, backing bytes."""

    __slots__ = ("space", "addr", "size", "owner", "_backing", "_live")

    def __init__(self, space: "DeviceSpace", addr: int, size: int, owner: int):
        self.space = space
        self.addr = addr
        self.size = size
        self.owner = owner
        self._backing = bytearray(size)
        self._live = True

    @property
    def live(self) -> bool:
        return self._live

    def region(self, offset: int = 0, size: int | None = None) -> "DeviceRegion":
        if size is None:
            size = self.size - offset
        if offset < 0 or size < 0 or offset + size > self.size:
            raise DeviceError(
                f"region [{offset}, {offset + size}) outside buffer of {self.size} bytes"
            )
        return DeviceRegion(self, self.addr + offset, size)

    def view(self, dtype=np.uint8, shape=None) -> np.ndarray:
        """Kernel-side view of the backing store (owner's 'device code')."""
        if not self._live:
            raise DeviceError("view of freed device buffer")
        arr = np.frombuffer(self._backing, dtype=dtype)
        if shape is not None:
            arr = arr.reshape(shape)
        return arr

    # wire-side access, used by the transport when a receive sinks here;
    # deliberately free of copy-model charges
    def write_wire(self, data: bytes, offset: int = 0) -> None:
        if not self._live:
            raise DeviceError("write into freed device buffer")
        if offset + len(data) > self.size:
            raise DeviceError("wire write beyond device buffer end")
        self._backing[offset : offset + len(data)] = data

    def read_wire(self, offset: int = 0, size: int | None = None) -> bytes:
        if not self._live:
            raise DeviceError("read from freed device buffer")
        if size is None:
            size = self.size - offset
        return bytes(self._backing[offset : offset + size])

    def __repr__(self):
        return f"DeviceBuffer(addr=0x{self.addr:x}, size={self.size}, owner={self.owner})"


class DeviceRegion:
    """An (address, size) window into a live buffer; what send paths take."""

    __slots__ = ("buffer", "addr", "size")

    def __init__(self, buffer: DeviceBuffer, addr: int, size: int):
        self.buffer = buffer
        self.addr = addr
        self.size = size

    @property
    def offset(self) -> int:
        return self.addr - self.buffer.addr


def as_region(obj, size: int | None = None) -> DeviceRegion:
    if isinstance(obj, DeviceRegion):
        r = obj
    elif isinstance(obj, DeviceBuffer):
        r = obj.region()
    else:
        raise DeviceError(f"not a device buffer or region: {type(obj).__name__}")
    if size is not None:
        if size > r.size:
            raise DeviceError(f"requested {size} bytes from a {r.size}-byte region")
        r = DeviceRegion(r.buffer, r.addr, size)
    return r


class DeviceSpace:
    """Registry of device allocations for one process group.

    clocks maps worker id -> clock object (VirtualClock or WallClock);
    copies charge the owning worker's clock.
    """

    def __init__(self, cost_model: CopyCostModel | None = None, clocks=None,
                 capacity_per_worker: int = 4 << 30):
        self.cost = cost_model or CopyCostModel()
        self.clocks = clocks if clocks is not None else {}
        self.capacity = capacity_per_worker
        self._next = _DEVICE_BASE
        self._bases: list[int] = []       # sorted live base addresses
        self._by_base: dict[int, DeviceBuffer] = {}
        self._used: dict[int, int] = {}   # worker -> live bytes

    # -- allocation --------------------------------------------------------

    def alloc(self, worker: int, size: int) -> DeviceBuffer:
        if size < 0:
            raise AllocationError("negative allocation size")
        used = self._used.get(worker, 0)
        if used + size > self.capacity:
            raise AllocationError(
                f"worker {worker} device capacity exceeded: "
                f"{used} + {size} > {self.capacity}"
            )
        addr = self._next
        self._next += max(size, 1)
        self._next = (self._next + _ALIGN - 1) // _ALIGN * _ALIGN
        buf = DeviceBuffer(self, addr, size, worker)
        bisect.insort(self._bases, addr)
        self._by_base[addr] = buf
        self._used[worker] = used + size
        return buf

    def free(self, buf: DeviceBuffer) -> None:
        if not buf._live:
            raise DeviceError(f"double free of {buf!r}")
        buf._live = False
        i = bisect.bisect_left(self._bases, buf.addr)
        del self._bases[i]
        del self._by_base[buf.addr]
        self._used[buf.owner] -= buf.size

    def is_device_address(self, addr: int) -> bool:
        """True for the base or any interior address of a live allocation."""
        if not isinstance(addr, int):
            return False
        i = bisect.bisect_right(self._bases, addr)
        if i == 0:
            return False
        buf = self._by_base[self._bases[i - 1]]
        # zero-size buffers own just their base address
        return addr == buf.addr or addr < buf.addr + buf.size

    def resolve(self, addr: int, size: int) -> DeviceRegion:
        i = bisect.bisect_right(self._bases, addr)
        if i == 0:
            raise DeviceError(f"0x{addr:x} is not a device address")
        buf = self._by_base[self._bases[i - 1]]
        if addr + size > buf.addr + buf.size or (addr > buf.addr and addr >= buf.addr + buf.size):
            raise DeviceError(
                f"span [0x{addr:x}, +{size}) does not fit allocation {buf!r}"
            )
        return DeviceRegion(buf, addr, size)

    # -- copies --------------------------------------------------------------

    def _clock(self, worker: int):
        clk = self.clocks.get(worker)
        if clk is None:
            raise DeviceError(f"no clock registered for worker {worker}")
        return clk

    def host_to_device(self, dst, data, size: int | None = None) -> int:
        """Copy host bytes into a device region. Returns the clock after
        charging latency + size/bandwidth to the owning worker."""
        data = bytes(data)
        if size is None:
            size = len(data)
        if size != len(data):
            raise DeviceError(f"host data is {len(data)} bytes, size argument {size}")
        r = as_region(dst)
        if size > r.size:
            raise DeviceError(f"copy of {size} bytes into {r.size}-byte region")
        r.buffer.write_wire(data, r.offset)
        return self._clock(r.buffer.owner).charge(self.cost.h2d_ns(size))

    def device_to_host(self, src, size: int | None = None) -> bytes:
        """Copy a device region out to host bytes, charging the owner."""
        r = as_region(src, size)
        data = r.buffer.read_wire(r.offset, r.size)
        self._clock(r.buffer.owner).charge(self.cost.d2h_ns(r.size))
        return data

    def device_to_device(self, dst, src, size: int | None = None) -> None:
        """On-device move (pack/unpack kernels); no copy-model charge."""
        s = as_region(src, size)
        d = as_region(dst, size if size is not None else s.size)
        if d.size < s.size:
            raise DeviceError(f"copy of {s.size} bytes into {d.size}-byte region")
        d.buffer.write_wire(s.buffer.read_wire(s.offset, s.size), d.offset)
