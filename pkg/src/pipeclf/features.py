"""Packet- and flow-level feature extraction from packet traces.

Packet features are stateless projections of one record.  Flow features live
in a capacity-bounded flow table keyed by a 32-bit FNV-1a hash of the
bidirectionally canonicalized 5-tuple; as on a real device, hash collisions
silently merge flows, but a debug mode tracks true tuples so the collision
rate can be reported.  Inter-arrival times feed configurable jitter bins
(half-open [lo, hi), defaults 1ms and 10ms); with K provisioned flows and N
bins the jitter state accounts for K*(N+1) memory entries.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

from .errors import FormatError, TimestampRegression, UnknownFeature
from .model_ir import FeatureSpec

logger = logging.getLogger(__name__)

TRACE_HEADER = "ts_ns,src_ip,dst_ip,src_port,dst_port,proto,len,flags"

DEFAULT_JITTER_EDGES_NS = (1_000_000, 10_000_000)  # 1ms, 10ms

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


@dataclass(frozen=True)
class PacketRecord:
    ts_ns: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int
    length: int
    flags: int = 0


@dataclass
class FlowState:
    key: int
    endpoints: tuple[int, int, int, int, int]  # first packet's 5-tuple (defines fwd)
    first_seen: int
    last_seen: int
    pkt_count: int = 0
    byte_count: int = 0
    last_iat: int = 0
    jitter_bins: list[int] = field(default_factory=list)
    fwd_pkts: int = 0
    rev_pkts: int = 0
    fwd_bytes: int = 0
    rev_bytes: int = 0

    @property
    def duration_ns(self) -> int:
        return self.last_seen - self.first_seen

    @property
    def data_rate(self) -> int:
        # bits per nanosecond, integer division; duration 0 counts as 1
        return (self.byte_count * 8) // max(self.duration_ns, 1)


@dataclass(frozen=True)
class FeatureVector:
    """Values aligned with a FeatureSpec list, clamped to declared widths."""

    values: tuple[int, ...]
    provenance: tuple[str, ...] = ()
    saturated: tuple[bool, ...] = ()

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def parse_ip(text: str) -> int:
    text = text.strip()
    if "." in text:
        parts = text.split(".")
        if len(parts) != 4 or any(not p.isdigit() or int(p) > 255 for p in parts):
            raise ValueError(f"bad IPv4 address {text!r}")
        out = 0
        for p in parts:
            out = (out << 8) | int(p)
        return out
    return int(text)


def parse_trace(lines: Iterable[str]) -> Iterator[PacketRecord]:
    """Parse the trace CSV; rejects malformed lines and timestamp regressions."""
    last_ts: int | None = None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line_no == 1 and line.startswith("ts_ns"):
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise FormatError(line_no, f"expected 8 fields, got {len(parts)}")
        try:
            rec = PacketRecord(
                ts_ns=int(parts[0]),
                src_ip=parse_ip(parts[1]),
                dst_ip=parse_ip(parts[2]),
                src_port=int(parts[3]),
                dst_port=int(parts[4]),
                proto=int(parts[5]),
                length=int(parts[6]),
                flags=int(parts[7]),
            )
        except ValueError as exc:
            raise FormatError(line_no, str(exc)) from exc
        if last_ts is not None and rec.ts_ns < last_ts:
            raise TimestampRegression(
                line_no, f"timestamp {rec.ts_ns} < previous {last_ts}"
            )
        last_ts = rec.ts_ns
        yield rec


# --------------------------------------------------------------------------
# Flow keys
# --------------------------------------------------------------------------


def canonical_tuple(r: PacketRecord) -> tuple[int, int, int, int, int]:
    """Direction-free 5-tuple: the smaller (ip, port) endpoint comes first."""
    a = (r.src_ip, r.src_port)
    b = (r.dst_ip, r.dst_port)
    if a <= b:
        return (a[0], a[1], b[0], b[1], r.proto)
    return (b[0], b[1], a[0], a[1], r.proto)


def fnv1a32(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def flow_key(r: PacketRecord) -> int:
    ip1, p1, ip2, p2, proto = canonical_tuple(r)
    blob = (
        ip1.to_bytes(4, "big")
        + p1.to_bytes(2, "big")
        + ip2.to_bytes(4, "big")
        + p2.to_bytes(2, "big")
        + proto.to_bytes(1, "big")
    )
    return fnv1a32(blob)


# --------------------------------------------------------------------------
# Packet-level extraction
# --------------------------------------------------------------------------

PACKET_EXTRACTORS: dict[str, Callable[[PacketRecord], int]] = {
    "src_ip": lambda r: r.src_ip,
    "dst_ip": lambda r: r.dst_ip,
    "src_port": lambda r: r.src_port,
    "dst_port": lambda r: r.dst_port,
    "proto": lambda r: r.proto,
    "len": lambda r: r.length,
    "flags": lambda r: r.flags,
    "ports_equal": lambda r: 1 if r.src_port == r.dst_port else 0,
}

FLOW_EXTRACTORS: dict[str, Callable[[FlowState], int]] = {
    "pkt_count": lambda s: s.pkt_count,
    "byte_count": lambda s: s.byte_count,
    "duration_ns": lambda s: s.duration_ns,
    "data_rate": lambda s: s.data_rate,
    "last_iat": lambda s: s.last_iat,
    "fwd_pkts": lambda s: s.fwd_pkts,
    "rev_pkts": lambda s: s.rev_pkts,
    "fwd_bytes": lambda s: s.fwd_bytes,
    "rev_bytes": lambda s: s.rev_bytes,
}


def clamp_to_width(value: int, width_bits: int) -> tuple[int, bool]:
    top = (1 << width_bits) - 1
    if value < 0:
        return 0, True
    if value > top:
        return top, True
    return value, False


def extract_packet_features(r: PacketRecord, specs: Sequence[FeatureSpec],
                            extract: dict[str, str] | None = None) -> FeatureVector:
    """Stateless projection of one record onto packet-level features."""
    extract = extract or {}
    values = []
    saturated = []
    for spec in specs:
        extractor_id = extract.get(spec.name, spec.name)
        fn = PACKET_EXTRACTORS.get(extractor_id)
        if fn is None:
            raise UnknownFeature(f"{extractor_id!r} is not a packet-level feature")
        v, sat = clamp_to_width(fn(r), spec.width_bits)
        values.append(v)
        saturated.append(sat)
    return FeatureVector(
        values=tuple(values),
        provenance=tuple("packet" for _ in specs),
        saturated=tuple(saturated),
    )


# --------------------------------------------------------------------------
# Flow table
# --------------------------------------------------------------------------


class FlowTable:
    """Single-writer LRU flow table with jitter bins.

    ``capacity`` is the provisioned flow count K; when full, the least
    recently updated flow is evicted (logged).  ``debug_tuples`` tracks the
    true canonical tuples behind each hash so collision rates are visible.
    """

    def __init__(
        self,
        capacity: int,
        jitter_edges_ns: Sequence[int] = DEFAULT_JITTER_EDGES_NS,
        specs: Sequence[FeatureSpec] | None = None,
        extract: dict[str, str] | None = None,
        debug_tuples: bool = False,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if list(jitter_edges_ns) != sorted(set(jitter_edges_ns)):
            raise ValueError("jitter edges must be strictly increasing")
        self.capacity = capacity
        self.jitter_edges = tuple(jitter_edges_ns)
        self.flows: OrderedDict[int, FlowState] = OrderedDict()
        self.specs = tuple(specs) if specs is not None else None
        self.extract = dict(extract or {})
        self.evictions = 0
        self.records_seen = 0
        self._debug = debug_tuples
        self._tuples: dict[int, set[tuple]] = {}

    @property
    def n_bins(self) -> int:
        return len(self.jitter_edges) + 1

    def jitter_memory_entries(self) -> int:
        """K*(N+1): one entry per bin plus the last-arrival register, per flow."""
        return self.capacity * (self.n_bins + 1)

    def _bin_for(self, iat_ns: int) -> int:
        for i, edge in enumerate(self.jitter_edges):
            if iat_ns < edge:
                return i
        return len(self.jitter_edges)

    def update(self, r: PacketRecord) -> tuple[FlowState, FeatureVector]:
        """Apply one record; returns a state snapshot and this packet's flow features."""
        self.records_seen += 1
        key = flow_key(r)
        if self._debug:
            self._tuples.setdefault(key, set()).add(canonical_tuple(r))
        state = self.flows.get(key)
        if state is None:
            if len(self.flows) >= self.capacity:
                evicted_key, evicted = self.flows.popitem(last=False)
                self.evictions += 1
                logger.debug(
                    "flow table full: evicted flow %08x after %d packets",
                    evicted_key,
                    evicted.pkt_count,
                )
            state = FlowState(
                key=key,
                endpoints=(r.src_ip, r.src_port, r.dst_ip, r.dst_port, r.proto),
                first_seen=r.ts_ns,
                last_seen=r.ts_ns,
                jitter_bins=[0] * self.n_bins,
            )
            self.flows[key] = state
        else:
            iat = r.ts_ns - state.last_seen
            state.last_iat = iat
            state.jitter_bins[self._bin_for(iat)] += 1
            state.last_seen = r.ts_ns
        state.pkt_count += 1
        state.byte_count += r.length
        forward = state.endpoints == (r.src_ip, r.src_port, r.dst_ip, r.dst_port, r.proto)
        if forward:
            state.fwd_pkts += 1
            state.fwd_bytes += r.length
        else:
            state.rev_pkts += 1
            state.rev_bytes += r.length
        self.flows.move_to_end(key)
        snapshot = replace(state, jitter_bins=list(state.jitter_bins))
        return snapshot, self._featurize(snapshot)

    def _featurize(self, state: FlowState) -> FeatureVector:
        if self.specs is None:
            names = ["pkt_count", "byte_count", "duration_ns", "data_rate", "last_iat"]
            raw = [FLOW_EXTRACTORS[n](state) for n in names]
            return FeatureVector(
                values=tuple(raw), provenance=tuple("flow" for _ in raw),
                saturated=tuple(False for _ in raw),
            )
        values = []
        saturated = []
        for spec in self.specs:
            extractor_id = self.extract.get(spec.name, spec.name)
            fn = FLOW_EXTRACTORS.get(extractor_id)
            if fn is None:
                raise UnknownFeature(f"{extractor_id!r} is not a flow-level feature")
            v, sat = clamp_to_width(fn(state), spec.width_bits)
            values.append(v)
            saturated.append(sat)
        return FeatureVector(
            values=tuple(values),
            provenance=tuple("flow" for _ in values),
            saturated=tuple(saturated),
        )

    def collision_rate(self) -> float:
        if not self._debug or not self._tuples:
            return 0.0
        collided = sum(1 for tuples in self._tuples.values() if len(tuples) > 1)
        return collided / len(self._tuples)


def update_flow(table: FlowTable, r: PacketRecord) -> tuple[FlowState, FeatureVector]:
    return table.update(r)


# --------------------------------------------------------------------------
# Aggregates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateStats:
    pkt_count: int
    byte_count: int
    flow_count: int


def group_by_dst_port(state: FlowState) -> int:
    return state.endpoints[3]


def aggregate_features(
    table: FlowTable, group_rule: Callable[[FlowState], int]
) -> dict[int, AggregateStats]:
    """Summed counters per flow group (e.g. all flows toward one port)."""
    packets: dict[int, int] = {}
    bytes_: dict[int, int] = {}
    flows: dict[int, int] = {}
    for state in table.flows.values():
        gid = group_rule(state)
        packets[gid] = packets.get(gid, 0) + state.pkt_count
        bytes_[gid] = bytes_.get(gid, 0) + state.byte_count
        flows[gid] = flows.get(gid, 0) + 1
    return {
        gid: AggregateStats(pkt_count=packets[gid], byte_count=bytes_[gid], flow_count=flows[gid])
        for gid in packets
    }
