"""Domain data model shared by the whole pipeline.

A flow is one bidirectional TLS connection summarized as packet metadata
for its first packets (sizes, directions, inter-arrival times) plus
aggregate statistics over the entire flow. Zero-payload packets are
excluded upstream, so every recorded size is at least 1 byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Recorded packet sequences cover at most the first 30 packets of a flow.
MAX_PSTATS_LEN = 30

# Payload sizes above the typical TCP MSS are clamped at ingestion.
MAX_PACKET_SIZE = 1460


@dataclass(frozen=True)
class PacketSeq:
    """Per-packet metadata for the first packets of a flow.

    sizes are payload byte counts, dirs are +1 (client to server) or -1
    (server to client), iats are inter-arrival times in milliseconds.
    The first IAT is 0 because the first packet has no predecessor.
    """

    sizes: tuple[int, ...]
    dirs: tuple[int, ...]
    iats: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class FlowStats:
    """Aggregate statistics over the whole bidirectional flow."""

    bytes_fwd: int
    bytes_rev: int
    packets_fwd: int
    packets_rev: int
    duration_s: float
    ppi_duration_s: float
    roundtrips: int
    flag_fin_fwd: int = 0
    flag_fin_rev: int = 0
    flag_rst_fwd: int = 0
    flag_rst_rev: int = 0
    flag_psh_fwd: int = 0
    flag_psh_rev: int = 0

    def flags(self) -> tuple[int, int, int, int, int, int]:
        return (
            self.flag_fin_fwd,
            self.flag_fin_rev,
            self.flag_rst_fwd,
            self.flag_rst_rev,
            self.flag_psh_fwd,
            self.flag_psh_rev,
        )


@dataclass(frozen=True)
class FlowRecord:
    """One labeled flow: packet sequence, aggregate stats, optional SNI."""

    pstats: PacketSeq
    stats: FlowStats
    sni: str | None = None
    label: str | None = None
    window_ts: int = 0


@dataclass
class ServiceTaxonomy:
    """Service list, service-to-group map, and SNI patterns per service.

    Patterns are either exact domains ("a.b.c") or wildcard suffixes
    ("*.b.c"). Every service belongs to exactly one provider group;
    singleton groups are allowed.
    """

    services: list[str]
    group_of: dict[str, str]
    patterns: list[tuple[str, str]] = field(default_factory=list)

    def validate(self) -> None:
        known = set(self.services)
        missing = known - set(self.group_of)
        if missing:
            raise ValueError(f"services without a group: {sorted(missing)}")
        for pattern, service in self.patterns:
            if service not in known:
                raise ValueError(f"pattern {pattern!r} maps to unknown service {service!r}")

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for service in self.services:
            out.setdefault(self.group_of[service], []).append(service)
        return out


@dataclass(frozen=True)
class DatasetSplit:
    """Known/unknown service partition; groups never straddle the split."""

    known: frozenset[str]
    unknown: frozenset[str]

    def __post_init__(self) -> None:
        overlap = self.known & self.unknown
        if overlap:
            raise ValueError(f"services in both halves: {sorted(overlap)}")


def derive_flowstats(
    pstats: PacketSeq,
    duration_s: float,
    flags: tuple[int, int, int, int, int, int] = (0, 0, 0, 0, 0, 0),
) -> FlowStats:
    """Aggregate a packet sequence into flow statistics.

    Byte and packet sums are split by direction sign; roundtrips counts
    direction changes; the packet-sequence duration is the IAT sum. An
    empty sequence yields all-zero statistics.
    """
    bytes_fwd = bytes_rev = packets_fwd = packets_rev = 0
    for size, direction in zip(pstats.sizes, pstats.dirs):
        if direction > 0:
            bytes_fwd += size
            packets_fwd += 1
        else:
            bytes_rev += size
            packets_rev += 1
    roundtrips = sum(
        1 for prev, cur in zip(pstats.dirs, pstats.dirs[1:]) if prev != cur
    )
    return FlowStats(
        bytes_fwd=bytes_fwd,
        bytes_rev=bytes_rev,
        packets_fwd=packets_fwd,
        packets_rev=packets_rev,
        duration_s=duration_s,
        ppi_duration_s=sum(pstats.iats) / 1000.0,
        roundtrips=roundtrips,
        flag_fin_fwd=flags[0],
        flag_fin_rev=flags[1],
        flag_rst_fwd=flags[2],
        flag_rst_rev=flags[3],
        flag_psh_fwd=flags[4],
        flag_psh_rev=flags[5],
    )


def validate_flow(record: FlowRecord) -> list[str]:
    """Return human-readable descriptions of all violated invariants."""
    problems: list[str] = []
    ps = record.pstats
    if not (len(ps.sizes) == len(ps.dirs) == len(ps.iats)):
        problems.append("length mismatch between sizes, dirs, and iats")
        return problems
    if len(ps) > MAX_PSTATS_LEN:
        problems.append(f"packet sequence longer than {MAX_PSTATS_LEN}")
    if any(s < 1 for s in ps.sizes):
        problems.append("packet size below 1 byte")
    if any(d not in (1, -1) for d in ps.dirs):
        problems.append("direction code outside {+1, -1}")
    if any(t < 0 for t in ps.iats):
        problems.append("negative inter-arrival time")
    if len(ps) >= 1 and ps.iats[0] != 0:
        problems.append("first inter-arrival time is not 0")

    st = record.stats
    for name in ("bytes_fwd", "bytes_rev", "packets_fwd", "packets_rev",
                 "duration_s", "ppi_duration_s", "roundtrips"):
        if getattr(st, name) < 0:
            problems.append(f"negative {name}")
    if st.ppi_duration_s > st.duration_s + 1e-9:
        problems.append("packet-sequence duration exceeds flow duration")
    if any(f not in (0, 1) for f in st.flags()):
        problems.append("flag outside {0, 1}")
    if st.roundtrips > max(0, len(ps) - 1):
        problems.append("roundtrips exceed packet-sequence length - 1")
    return problems
