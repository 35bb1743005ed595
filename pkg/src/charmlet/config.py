"""Runtime configuration: workers, links, device costs, tag layout, time mode.

Everything the transport, device simulator, and runtime need to agree on is
collected here so a single object can be handed down the stack or loaded
from a TOML file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

WALL = "wall"
VIRTUAL = "virtual"

# Frame header: magic(4) + kind(1) + tag(8) + length(4).
FRAME_HEADER_BYTES = 17


@dataclass(frozen=True)
class LinkModel:
    """Cost model for one link class.

    latency_us : one-way latency in microseconds.
    bandwidth_gbps : decimal gigabytes per second (1 GB = 1e9 bytes).
    """

    latency_us: float = 1.0
    bandwidth_gbps: float = 12.5

    @property
    def latency_ns(self) -> int:
        return round(self.latency_us * 1000.0)

    @property
    def bandwidth_bps(self) -> float:
        return self.bandwidth_gbps * 1e9

    def transfer_ns(self, nbytes: int) -> int:
        """Latency plus wire occupancy for nbytes, in whole nanoseconds."""
        return self.latency_ns + round(nbytes * 1e9 / self.bandwidth_bps)

    def occupancy_ns(self, nbytes: int) -> int:
        """Wire occupancy alone (no latency term)."""
        return round(nbytes * 1e9 / self.bandwidth_bps)


@dataclass(frozen=True)
class CopyCostModel:
    """Host<->device copy costs. Bandwidths in bytes/second, latencies in us."""

    h2d_latency_us: float = 5.0
    h2d_bandwidth: float = 10e9
    d2h_latency_us: float = 5.0
    d2h_bandwidth: float = 10e9

    def h2d_ns(self, nbytes: int) -> int:
        return round(self.h2d_latency_us * 1000.0) + round(nbytes * 1e9 / self.h2d_bandwidth)

    def d2h_ns(self, nbytes: int) -> int:
        return round(self.d2h_latency_us * 1000.0) + round(nbytes * 1e9 / self.d2h_bandwidth)


@dataclass(frozen=True)
class TagLayoutSpec:
    """Field widths for the 64-bit tag codec (see tags module)."""

    pe_bits: int = 32
    counter_bits: int = 28
    channel_id_bits: int = 28
    channel_counter_bits: int = 32


@dataclass
class RuntimeConfig:
    """Top-level configuration shared by transport, devices, and runtime."""

    workers: int = 1
    time_mode: str = VIRTUAL
    eager_threshold: int = 8192
    eager_prepost: int = 64
    max_message_bytes: int = 1 << 30
    connect_timeout_s: float = 5.0
    ranks_per_node: int = 1
    seed: int = 0
    addresses: dict[int, str] = field(default_factory=dict)
    link_intra: LinkModel = field(default_factory=lambda: LinkModel(1.0, 50.0))
    link_inter: LinkModel = field(default_factory=lambda: LinkModel(1.0, 12.5))
    copy_model: CopyCostModel = field(default_factory=CopyCostModel)
    device_capacity: int = 4 << 30
    tag_layout: TagLayoutSpec = field(default_factory=TagLayoutSpec)

    def node_of(self, rank: int) -> int:
        return rank // max(1, self.ranks_per_node)

    def link_between(self, rank_a: int, rank_b: int) -> LinkModel:
        if self.node_of(rank_a) == self.node_of(rank_b):
            return self.link_intra
        return self.link_inter

    def with_overrides(self, **kw) -> "RuntimeConfig":
        return replace(self, **kw)


def _get(d: dict, key: str, default):
    v = d.get(key, default)
    return v


def load_config(path: str) -> RuntimeConfig:
    """Load a RuntimeConfig from a TOML file.

    Recognized keys: workers, time_mode, eager_threshold, eager_prepost,
    ranks_per_node, seed, [addresses] (rank -> "host:port"),
    [link.intra]/[link.inter] (latency_us, bandwidth_gbps),
    [device] (h2d/d2h latency_us + bandwidth_gbps, capacity_gib),
    [tags] (pe_bits, counter_bits, channel_id_bits, channel_counter_bits).
    """
    with open(path, "rb") as f:
        raw = _toml.load(f)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RuntimeConfig:
    cfg = RuntimeConfig()
    cfg.workers = int(_get(raw, "workers", cfg.workers))
    mode = _get(raw, "time_mode", cfg.time_mode)
    if mode not in (WALL, VIRTUAL):
        raise ValueError(f"time_mode must be 'wall' or 'virtual', got {mode!r}")
    cfg.time_mode = mode
    cfg.eager_threshold = int(_get(raw, "eager_threshold", cfg.eager_threshold))
    cfg.eager_prepost = int(_get(raw, "eager_prepost", cfg.eager_prepost))
    cfg.ranks_per_node = int(_get(raw, "ranks_per_node", cfg.ranks_per_node))
    cfg.seed = int(_get(raw, "seed", cfg.seed))
    cfg.connect_timeout_s = float(_get(raw, "connect_timeout_s", cfg.connect_timeout_s))

    addrs = raw.get("addresses", {})
    cfg.addresses = {int(k): str(v) for k, v in addrs.items()}

    link = raw.get("link", {})
    if "intra" in link:
        cfg.link_intra = LinkModel(
            float(link["intra"].get("latency_us", 1.0)),
            float(link["intra"].get("bandwidth_gbps", 50.0)),
        )
    if "inter" in link:
        cfg.link_inter = LinkModel(
            float(link["inter"].get("latency_us", 1.0)),
            float(link["inter"].get("bandwidth_gbps", 12.5)),
        )

    dev = raw.get("device", {})
    if dev:
        cfg.copy_model = CopyCostModel(
            h2d_latency_us=float(dev.get("h2d_latency_us", 5.0)),
            h2d_bandwidth=float(dev.get("h2d_bandwidth_gbps", 10.0)) * 1e9,
            d2h_latency_us=float(dev.get("d2h_latency_us", 5.0)),
            d2h_bandwidth=float(dev.get("d2h_bandwidth_gbps", 10.0)) * 1e9,
        )
        if "capacity_gib" in dev:
            cfg.device_capacity = int(float(dev["capacity_gib"]) * (1 << 30))

    tags = raw.get("tags", {})
    if tags:
        cfg.tag_layout = TagLayoutSpec(
            pe_bits=int(tags.get("pe_bits", 32)),
            counter_bits=int(tags.get("counter_bits", 28)),
            channel_id_bits=int(tags.get("channel_id_bits", 28)),
            channel_counter_bits=int(tags.get("channel_counter_bits", 32)),
        )
    return cfg
