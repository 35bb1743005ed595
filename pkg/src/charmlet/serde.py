"""Self-describing binary encoding for entry-method arguments.

One type byte per value followed by a little-endian body. Supported:
None, bool, int (64-bit signed), float, bytes, str, tuple, list, chare
ids, callbacks, future references, and device-argument slots (which
stand in for payloads traveling outside the envelope).
"""

from __future__ import annotations

import struct
from numbers import Integral, Real

from .completion import Callback, ChareId, Completion, FutureRef

_I32 = struct.Struct("<i")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_CHARE = struct.Struct("<iiI")
_FREF = struct.Struct("<IQ")


class SerdeError(TypeError):
    pass


class DevSlot:
    """Marker for a device argument: index into the envelope descriptors."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index

    def __repr__(self):
        return f"DevSlot({self.index})"


def _pack_value(out: bytearray, v) -> None:
    if v is None:
        out += b"N"
    elif v is True:
        out += b"1"
    elif v is False:
        out += b"0"
    elif isinstance(v, Integral):
        out += b"i"
        out += _I64.pack(int(v))
    elif isinstance(v, Real):
        out += b"f"
        out += _F64.pack(float(v))
    elif isinstance(v, (bytes, bytearray, memoryview)):
        b = bytes(v)
        out += b"b"
        out += _U32.pack(len(b))
        out += b
    elif isinstance(v, str):
        b = v.encode("utf-8")
        out += b"s"
        out += _U32.pack(len(b))
        out += b
    elif isinstance(v, tuple):
        out += b"t"
        out += _U32.pack(len(v))
        for item in v:
            _pack_value(out, item)
    elif isinstance(v, list):
        out += b"l"
        out += _U32.pack(len(v))
        for item in v:
            _pack_value(out, item)
    elif isinstance(v, ChareId):
        out += b"C"
        out += _CHARE.pack(v.collection, v.element, v.home_pe)
    elif isinstance(v, Callback):
        out += b"K"
        out += _CHARE.pack(v.target.collection, v.target.element, v.target.home_pe)
        name = v.entry.encode("utf-8")
        out += _U16.pack(len(name))
        out += name
        _pack_value(out, tuple(v.extra))
    elif isinstance(v, FutureRef):
        out += b"R"
        out += _FREF.pack(v.pe, v.fid)
    elif isinstance(v, DevSlot):
        out += b"D"
        out += _U16.pack(v.index)
    elif isinstance(v, Completion):
        out += b"M"
        out += _U32.pack(v.length)
        out += struct.pack("<Qq", v.tag, -1 if v.timestamp is None else v.timestamp)
        _pack_value(out, v.status)
        _pack_value(out, v.payload)
        _pack_value(out, v.error)
    else:
        raise SerdeError(
            f"cannot send a {type(v).__name__} as an entry argument"
        )


def pack_args(args: tuple) -> bytes:
    out = bytearray()
    out += _U16.pack(len(args))
    for v in args:
        _pack_value(out, v)
    return bytes(out)


def _unpack_value(data: bytes, pos: int):
    code = data[pos : pos + 1]
    pos += 1
    if code == b"N":
        return None, pos
    if code == b"1":
        return True, pos
    if code == b"0":
        return False, pos
    if code == b"i":
        return _I64.unpack_from(data, pos)[0], pos + 8
    if code == b"f":
        return _F64.unpack_from(data, pos)[0], pos + 8
    if code in (b"b", b"s"):
        (n,) = _U32.unpack_from(data, pos)
        pos += 4
        raw = data[pos : pos + n]
        return (raw if code == b"b" else raw.decode("utf-8")), pos + n
    if code in (b"t", b"l"):
        (n,) = _U32.unpack_from(data, pos)
        pos += 4
        items = []
        for _ in range(n):
            v, pos = _unpack_value(data, pos)
            items.append(v)
        return (tuple(items) if code == b"t" else items), pos
    if code == b"C":
        coll, elem, home = _CHARE.unpack_from(data, pos)
        return ChareId(coll, elem, home), pos + _CHARE.size
    if code == b"K":
        coll, elem, home = _CHARE.unpack_from(data, pos)
        pos += _CHARE.size
        (nlen,) = _U16.unpack_from(data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        extra, pos = _unpack_value(data, pos)
        return Callback(ChareId(coll, elem, home), name, tuple(extra)), pos
    if code == b"R":
        pe, fid = _FREF.unpack_from(data, pos)
        return FutureRef(pe, fid), pos + _FREF.size
    if code == b"D":
        (idx,) = _U16.unpack_from(data, pos)
        return DevSlot(idx), pos + 2
    if code == b"M":
        (length,) = _U32.unpack_from(data, pos)
        pos += 4
        tag, ts = struct.unpack_from("<Qq", data, pos)
        pos += 16
        status, pos = _unpack_value(data, pos)
        payload, pos = _unpack_value(data, pos)
        error, pos = _unpack_value(data, pos)
        comp = Completion(status=status, length=length, tag=tag,
                          timestamp=None if ts < 0 else ts,
                          payload=payload, error=error)
        return comp, pos
    raise SerdeError(f"unknown type code {code!r} at offset {pos - 1}")


def unpack_args(data: bytes) -> tuple:
    (n,) = _U16.unpack_from(data, 0)
    pos = 2
    out = []
    for _ in range(n):
        v, pos = _unpack_value(data, pos)
        out.append(v)
    if pos != len(data):
        raise SerdeError(f"{len(data) - pos} trailing bytes after arguments")
    return tuple(out)
