"""64-bit tag codec for the tagged transport.

The top 4 bits always hold the message kind. The remaining 60 bits are
split two ways depending on the kind:

  messaging kinds (EAGER, PROBE, DEVICE):
      | kind:4 | source_pe:pe_bits | counter:counter_bits |
  channel kind (CHANNEL):
      | kind:4 | channel_id:channel_id_bits | direction:1 | counter:channel_counter_bits-1 |

The direction flag occupies the top bit of the channel counter field, so a
channel counter runs to 2**(channel_counter_bits-1) before exhaustion.
Field widths are configurable per run (TagLayout); both schemes must tile
the full 64 bits exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import TagLayoutSpec

TAG_BITS = 64
KIND_BITS = 4

# Message kinds (wire values, fixed).
EAGER = 0
PROBE = 1
DEVICE = 2
CHANNEL = 3

_KIND_NAMES = {EAGER: "EAGER", PROBE: "PROBE", DEVICE: "DEVICE", CHANNEL: "CHANNEL"}
_MESSAGING_KINDS = (EAGER, PROBE, DEVICE)

FULL_MASK = (1 << TAG_BITS) - 1


class TagError(ValueError):
    """Raised on field overflow or on decoding an unknown kind."""


def _check_field(name: str, value: int, bits: int) -> None:
    if not 0 <= value < (1 << bits):
        raise TagError(f"{name}={value} does not fit in {bits} bits")


@dataclass(frozen=True)
class TagLayout:
    """Concrete bit layout; validates that both schemes tile 64 bits."""

    pe_bits: int = 32
    counter_bits: int = 28
    channel_id_bits: int = 28
    channel_counter_bits: int = 32

    def __post_init__(self):
        if KIND_BITS + self.pe_bits + self.counter_bits != TAG_BITS:
            raise TagError(
                "messaging layout must tile 64 bits: "
                f"4+{self.pe_bits}+{self.counter_bits} != 64"
            )
        if KIND_BITS + self.channel_id_bits + self.channel_counter_bits != TAG_BITS:
            raise TagError(
                "channel layout must tile 64 bits: "
                f"4+{self.channel_id_bits}+{self.channel_counter_bits} != 64"
            )
        if self.channel_counter_bits < 2:
            raise TagError("channel counter field needs at least 2 bits")

    @classmethod
    def from_spec(cls, spec: TagLayoutSpec) -> "TagLayout":
        return cls(
            pe_bits=spec.pe_bits,
            counter_bits=spec.counter_bits,
            channel_id_bits=spec.channel_id_bits,
            channel_counter_bits=spec.channel_counter_bits,
        )

    # -- messaging scheme ---------------------------------------------------

    def encode_messaging(self, kind: int, source_pe: int, counter: int) -> int:
        if kind not in _MESSAGING_KINDS:
            raise TagError(f"kind {kind} is not a messaging kind (EAGER/PROBE/DEVICE)")
        _check_field("source_pe", source_pe, self.pe_bits)
        _check_field("counter", counter, self.counter_bits)
        return (
            (kind << (self.pe_bits + self.counter_bits))
            | (source_pe << self.counter_bits)
            | counter
        )

    # -- channel scheme -----------------------------------------------------

    def encode_channel(self, channel_id: int, direction: int, counter: int) -> int:
        _check_field("channel_id", channel_id, self.channel_id_bits)
        if direction not in (0, 1):
            raise TagError(f"direction={direction} must be 0 or 1")
        _check_field("counter", counter, self.channel_counter_bits - 1)
        return (
            (CHANNEL << (self.channel_id_bits + self.channel_counter_bits))
            | (channel_id << self.channel_counter_bits)
            | (direction << (self.channel_counter_bits - 1))
            | counter
        )

    # -- decoding -----------------------------------------------------------

    def kind_of(self, tag: int) -> int:
        return (tag >> (TAG_BITS - KIND_BITS)) & 0xF

    def decode(self, tag: int) -> "DecodedTag":
        _check_field("tag", tag, TAG_BITS)
        kind = self.kind_of(tag)
        if kind in _MESSAGING_KINDS:
            pe = (tag >> self.counter_bits) & ((1 << self.pe_bits) - 1)
            ctr = tag & ((1 << self.counter_bits) - 1)
            return DecodedTag(kind=kind, source_pe=pe, counter=ctr)
        if kind == CHANNEL:
            cid = (tag >> self.channel_counter_bits) & ((1 << self.channel_id_bits) - 1)
            direction = (tag >> (self.channel_counter_bits - 1)) & 1
            ctr = tag & ((1 << (self.channel_counter_bits - 1)) - 1)
            return DecodedTag(
                kind=CHANNEL, channel_id=cid, direction=direction, counter=ctr
            )
        raise TagError(f"unknown kind code {kind} in tag 0x{tag:016x}")

    # -- masks --------------------------------------------------------------

    @property
    def kind_mask(self) -> int:
        """Mask covering only the 4 kind bits (wildcard receives)."""
        return 0xF << (TAG_BITS - KIND_BITS)

    def kind_template(self, kind: int) -> int:
        return kind << (TAG_BITS - KIND_BITS)

    # -- digest ---------------------------------------------------------------

    def digest(self) -> int:
        """FNV-1a 64 over the layout fields and kind codes.

        Exchanged in the connection handshake; both sides must agree before
        any tagged traffic flows.
        """
        text = "L{},{},{},{};K{},{},{},{}".format(
            self.pe_bits,
            self.counter_bits,
            self.channel_id_bits,
            self.channel_counter_bits,
            EAGER,
            PROBE,
            DEVICE,
            CHANNEL,
        )
        return fnv1a64(text.encode("ascii"))


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & FULL_MASK
    return h


def kind_name(kind: int) -> str:
    return _KIND_NAMES.get(kind, f"kind{kind}")


DEFAULT_LAYOUT = TagLayout()


@dataclass(frozen=True)
class DecodedTag:
    kind: int
    source_pe: int | None = None
    counter: int = 0
    channel_id: int | None = None
    direction: int | None = None

    def __str__(self):
        if self.kind == CHANNEL:
            return (
                f"{kind_name(self.kind)}(id={self.channel_id}, "
                f"dir={self.direction}, ctr={self.counter})"
            )
        return f"{kind_name(self.kind)}(pe={self.source_pe}, ctr={self.counter})"
