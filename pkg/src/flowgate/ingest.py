"""Dataset-collection chain: labeling, filtering, sampling, file I/O.

Flows enter as FlowRecords, get a service label from their SNI domain
via a suffix trie, pass the validity filters, survive (or not) dynamic
per-service sampling, lose their SNI, and land in per-window CSV files.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator

from .core import FlowRecord, FlowStats, PacketSeq, ServiceTaxonomy

FLOW_COLUMNS = [
    "LABEL", "PPI_LEN", "PPI_SIZES", "PPI_DIRS", "PPI_IATS",
    "BYTES", "BYTES_REV", "PACKETS", "PACKETS_REV",
    "DURATION", "PPI_DURATION", "ROUNDTRIPS",
    "F_FIN", "F_FIN_REV", "F_RST", "F_RST_REV", "F_PSH", "F_PSH_REV",
    "WINDOW",
]


class FlowParseError(ValueError):
    """Malformed row in a flow CSV; carries the line number and column."""

    def __init__(self, line: int, column: str, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# SNI suffix trie


class _TrieNode:
    __slots__ = ("children", "exact", "wildcard")

    def __init__(self) -> None:
        self.children: dict[str, _TrieNode] = {}
        self.exact: str | None = None
        self.wildcard: str | None = None


class SniTrie:
    """Reversed-label trie mapping domains to services.

    Patterns are exact domains or wildcard suffixes "*.suffix". A
    wildcard needs at least one extra label: "*.youtube.com" matches
    "www.youtube.com" but not "youtube.com". The longest matching
    suffix wins; an exact entry beats a wildcard of the same suffix.
    """

    def __init__(self, patterns: Iterable[tuple[str, str]] = ()) -> None:
        self._root = _TrieNode()
        for pattern, service in patterns:
            self.insert(pattern, service)

    def insert(self, pattern: str, service: str) -> None:
        if pattern.startswith("*."):
            labels = pattern[2:].split(".")
            wildcard = True
        else:
            labels = pattern.split(".")
            wildcard = False
        if any(not label for label in labels):
            raise ValueError(f"empty label in pattern {pattern!r}")
        node = self._root
        for label in reversed(labels):
            node = node.children.setdefault(label, _TrieNode())
        if wildcard:
            node.wildcard = service
        else:
            node.exact = service

    def match(self, domain: str) -> str | None:
        labels = domain.split(".")
        node = self._root
        best: str | None = None
        depth = 0
        for label in reversed(labels):
            child = node.children.get(label)
            if child is None:
                return best
            node = child
            depth += 1
            # A wildcard here needs at least one label below this suffix.
            if depth < len(labels) and node.wildcard is not None:
                best = node.wildcard
        if node.exact is not None:
            return node.exact
        return best


def trie_match(trie: SniTrie, domain: str) -> str | None:
    return trie.match(domain)


# ---------------------------------------------------------------------------
# Filtering, sampling, anonymization


def filter_flow(record: FlowRecord) -> tuple[bool, str | None]:
    """Apply the validity filters; returns (keep, drop reason)."""
    total = record.stats.packets_fwd + record.stats.packets_rev
    if total < 3:
        return False, "short"
    if record.stats.packets_fwd == 0 or record.stats.packets_rev == 0:
        return False, "unidirectional"
    if record.label is None:
        return False, "no-sni"
    return True, None


def anonymize(record: FlowRecord) -> FlowRecord:
    """Strip the SNI, keeping the derived label as ground truth."""
    if record.label is None:
        raise ValueError("refusing to anonymize an unlabeled record")
    if record.sni is None:
        return record
    return replace(record, sni=None)


@dataclass
class SamplerConfig:
    """Rank breakpoints for the keep-ratio ladder.

    Ranks 1..top_ranks get the heaviest 1:top_ratio sampling, ranks up
    to ladder_end get a linear 1:9 .. 1:2 ladder, everything below is
    kept in full. Ratios are re-derived every rerank_windows windows.
    """

    top_ranks: int = 20
    top_ratio: int = 15
    ladder_start_ratio: int = 9
    ladder_end_ratio: int = 2
    ladder_end: int = 100
    rerank_windows: int = 12


class SamplerState:
    """Deterministic per-service modulo sampler with dynamic ratios."""

    def __init__(self, config: SamplerConfig | None = None) -> None:
        self.config = config or SamplerConfig()
        self.offered: dict[str, int] = {}
        self.kept: dict[str, int] = {}
        self.ratio_of: dict[str, int] = {}
        self._last_rerank_window: int | None = None

    def ratio_for_rank(self, rank: int) -> int:
        cfg = self.config
        if rank <= cfg.top_ranks:
            return cfg.top_ratio
        if rank <= cfg.ladder_end:
            span = cfg.ladder_end - cfg.top_ranks - 1
            if span <= 0:
                return cfg.ladder_end_ratio
            frac = (rank - cfg.top_ranks - 1) / span
            ladder = cfg.ladder_start_ratio - frac * (
                cfg.ladder_start_ratio - cfg.ladder_end_ratio
            )
            return int(round(ladder))
        return 1

    def observe_window(self, window_ts: int) -> None:
        """Advance to a window; re-rank services on period boundaries."""
        if self._last_rerank_window is None:
            self._last_rerank_window = window_ts
            return
        if window_ts - self._last_rerank_window >= self.config.rerank_windows:
            self.rerank()
            self._last_rerank_window = window_ts

    def rerank(self) -> None:
        ranked = sorted(self.offered, key=lambda s: (-self.offered[s], s))
        self.ratio_of = {
            service: self.ratio_for_rank(rank)
            for rank, service in enumerate(ranked, start=1)
        }

    def decide(self, service: str) -> bool:
        counter = self.offered.get(service, 0)
        self.offered[service] = counter + 1
        ratio = self.ratio_of.get(service, 1)
        keep = counter % ratio == 0
        if keep:
            self.kept[service] = self.kept.get(service, 0) + 1
        return keep


def sampler_decide(state: SamplerState, service: str) -> bool:
    return state.decide(service)


# ---------------------------------------------------------------------------
# Flow CSV serialization

_QUANT_IAT = "{:.3f}"
_QUANT_DURATION = "{:.6f}"


def quantize_iat(value: float) -> float:
    """Snap an IAT to its on-disk millisecond precision (3 decimals)."""
    return float(_QUANT_IAT.format(value))


def quantize_duration(value: float) -> float:
    """Snap a duration to its on-disk second precision (6 decimals)."""
    return float(_QUANT_DURATION.format(value))


def _record_to_row(record: FlowRecord, with_sni: bool) -> list[str]:
    ps = record.pstats
    st = record.stats
    row = [
        record.label or "",
        str(len(ps)),
        "|".join(str(s) for s in ps.sizes),
        "|".join(str(d) for d in ps.dirs),
        "|".join(_QUANT_IAT.format(t) for t in ps.iats),
        str(st.bytes_fwd),
        str(st.bytes_rev),
        str(st.packets_fwd),
        str(st.packets_rev),
        _QUANT_DURATION.format(st.duration_s),
        _QUANT_DURATION.format(st.ppi_duration_s),
        str(st.roundtrips),
        *[str(f) for f in st.flags()],
        str(record.window_ts),
    ]
    if with_sni:
        row.append(record.sni or "")
    return row


def _parse_int(value: str, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise FlowParseError(line, column, f"not an integer: {value!r}") from None


def _parse_float(value: str, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise FlowParseError(line, column, f"not a number: {value!r}") from None


def _row_to_record(row: dict[str, str], line: int, with_sni: bool) -> FlowRecord:
    sizes_raw = row["PPI_SIZES"]
    dirs_raw = row["PPI_DIRS"]
    iats_raw = row["PPI_IATS"]
    sizes = tuple(
        _parse_int(tok, line, "PPI_SIZES")
        for tok in sizes_raw.split("|") if tok
    )
    dirs = tuple(
        _parse_int(tok, line, "PPI_DIRS")
        for tok in dirs_raw.split("|") if tok
    )
    iats = tuple(
        _parse_float(tok, line, "PPI_IATS")
        for tok in iats_raw.split("|") if tok
    )
    if any(d not in (1, -1) for d in dirs):
        raise FlowParseError(line, "PPI_DIRS", f"direction code outside +-1: {dirs_raw!r}")
    declared_len = _parse_int(row["PPI_LEN"], line, "PPI_LEN")
    if declared_len != len(sizes):
        raise FlowParseError(line, "PPI_LEN", "declared length disagrees with PPI_SIZES")
    if not (len(sizes) == len(dirs) == len(iats)):
        raise FlowParseError(line, "PPI_DIRS", "sizes, dirs, and iats differ in length")
    stats = FlowStats(
        bytes_fwd=_parse_int(row["BYTES"], line, "BYTES"),
        bytes_rev=_parse_int(row["BYTES_REV"], line, "BYTES_REV"),
        packets_fwd=_parse_int(row["PACKETS"], line, "PACKETS"),
        packets_rev=_parse_int(row["PACKETS_REV"], line, "PACKETS_REV"),
        duration_s=_parse_float(row["DURATION"], line, "DURATION"),
        ppi_duration_s=_parse_float(row["PPI_DURATION"], line, "PPI_DURATION"),
        roundtrips=_parse_int(row["ROUNDTRIPS"], line, "ROUNDTRIPS"),
        flag_fin_fwd=_parse_int(row["F_FIN"], line, "F_FIN"),
        flag_fin_rev=_parse_int(row["F_FIN_REV"], line, "F_FIN_REV"),
        flag_rst_fwd=_parse_int(row["F_RST"], line, "F_RST"),
        flag_rst_rev=_parse_int(row["F_RST_REV"], line, "F_RST_REV"),
        flag_psh_fwd=_parse_int(row["F_PSH"], line, "F_PSH"),
        flag_psh_rev=_parse_int(row["F_PSH_REV"], line, "F_PSH_REV"),
    )
    sni = row.get("SNI") or None if with_sni else None
    return FlowRecord(
        pstats=PacketSeq(sizes=sizes, dirs=dirs, iats=iats),
        stats=stats,
        sni=sni,
        label=row["LABEL"] or None,
        window_ts=_parse_int(row["WINDOW"], line, "WINDOW"),
    )


def write_flow_file(path: str | os.PathLike, records: Iterable[FlowRecord],
                    with_sni: bool = False) -> int:
    """Write records as CSV; returns the number of rows written."""
    columns = FLOW_COLUMNS + (["SNI"] if with_sni else [])
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for record in records:
            writer.writerow(_record_to_row(record, with_sni))
            count += 1
    return count


def read_flow_file(path: str | os.PathLike) -> Iterator[FlowRecord]:
    """Stream records from a flow CSV, validating as we go."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FlowParseError(1, "-", "missing header") from None
        with_sni = "SNI" in header
        expected = FLOW_COLUMNS + (["SNI"] if with_sni else [])
        if header != expected:
            raise FlowParseError(1, "-", f"unexpected header {header!r}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise FlowParseError(line, "-", f"expected {len(expected)} fields, got {len(row)}")
            yield _row_to_record(dict(zip(expected, row)), line, with_sni)


# ---------------------------------------------------------------------------
# Window rotation


class WindowWriter:
    """Routes records into one `flows_<window>.csv` file per window.

    Records must arrive with non-decreasing window indices; empty
    windows produce no file.
    """

    def __init__(self, out_dir: str | os.PathLike, with_sni: bool = False) -> None:
        self.out_dir = str(out_dir)
        self.with_sni = with_sni
        self._current_window: int | None = None
        self._fh: IO[str] | None = None
        self._writer: csv.writer | None = None
        self.files_written: list[str] = []

    def write(self, record: FlowRecord) -> None:
        if self._current_window is not None and record.window_ts < self._current_window:
            raise ValueError(
                f"window {record.window_ts} after window {self._current_window}"
            )
        if record.window_ts != self._current_window:
            self._rotate(record.window_ts)
        self._writer.writerow(_record_to_row(record, self.with_sni))

    def _rotate(self, window_ts: int) -> None:
        self.close()
        path = os.path.join(self.out_dir, f"flows_{window_ts}.csv")
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        columns = FLOW_COLUMNS + (["SNI"] if self.with_sni else [])
        self._writer.writerow(columns)
        self._current_window = window_ts
        self.files_written.append(path)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self._writer = None

    def __enter__(self) -> "WindowWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Taxonomy file


def write_taxonomy(path: str | os.PathLike, taxonomy: ServiceTaxonomy) -> None:
    """Write the PATTERN,SERVICE,GROUP CSV.

    Services without SNI patterns get one row with an empty pattern so
    their group membership survives the round trip.
    """
    by_service: dict[str, list[str]] = {s: [] for s in taxonomy.services}
    for pattern, service in taxonomy.patterns:
        by_service[service].append(pattern)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["PATTERN", "SERVICE", "GROUP"])
        for service in taxonomy.services:
            group = taxonomy.group_of[service]
            patterns = by_service[service] or [""]
            for pattern in patterns:
                writer.writerow([pattern, service, group])


def read_taxonomy(path: str | os.PathLike) -> ServiceTaxonomy:
    services: list[str] = []
    group_of: dict[str, str] = {}
    patterns: list[tuple[str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["PATTERN", "SERVICE", "GROUP"]:
            raise ValueError(f"unexpected taxonomy header {reader.fieldnames!r}")
        for row in reader:
            service = row["SERVICE"]
            if service not in group_of:
                services.append(service)
                group_of[service] = row["GROUP"]
            elif group_of[service] != row["GROUP"]:
                raise ValueError(f"service {service!r} listed with two groups")
            if row["PATTERN"]:
                patterns.append((row["PATTERN"], service))
    taxonomy = ServiceTaxonomy(services=services, group_of=group_of, patterns=patterns)
    taxonomy.validate()
    return taxonomy
