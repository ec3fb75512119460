import string

import numpy as np
import pytest

from flowgate.core import ServiceTaxonomy
from flowgate.ingest import (
    FlowParseError,
    SamplerConfig,
    SamplerState,
    SniTrie,
    WindowWriter,
    anonymize,
    filter_flow,
    quantize_duration,
    quantize_iat,
    read_flow_file,
    read_taxonomy,
    trie_match,
    write_flow_file,
    write_taxonomy,
)
from flowgate.synth import ServiceProfile, sample_flow
from conftest import make_flow, random_flow


# ---------------------------------------------------------------------------
# SNI trie


def naive_match(patterns, domain):
    """Reference longest-suffix scan: exact match wins outright, else the
    wildcard with the most suffix labels."""
    dlabels = domain.split(".")
    best, best_depth = None, -1
    for pattern, service in patterns:
        if pattern.startswith("*."):
            plabels = pattern[2:].split(".")
            if (len(plabels) < len(dlabels)
                    and dlabels[-len(plabels):] == plabels
                    and len(plabels) > best_depth):
                best, best_depth = service, len(plabels)
        elif pattern.split(".") == dlabels:
            return service
    return best


class TestSniTrie:
    def test_exact_match(self):
        trie = SniTrie([("www.video.example", "video")])
        assert trie.match("www.video.example") == "video"
        assert trie.match("video.example") is None

    def test_wildcard_needs_extra_label(self):
        trie = SniTrie([("*.video.example", "video")])
        assert trie.match("cdn.video.example") == "video"
        assert trie.match("a.b.video.example") == "video"
        assert trie.match("video.example") is None

    def test_longest_suffix_wins(self):
        trie = SniTrie([("*.example", "generic"), ("*.video.example", "video")])
        assert trie.match("cdn.video.example") == "video"
        assert trie.match("cdn.mail.example") == "generic"

    def test_exact_beats_wildcard(self):
        trie = SniTrie([("*.video.example", "wild"),
                        ("cdn.video.example", "exact")])
        assert trie.match("cdn.video.example") == "exact"
        assert trie.match("eu.video.example") == "wild"

    def test_rejects_empty_label(self):
        with pytest.raises(ValueError, match="empty label"):
            SniTrie([("a..example", "svc")])

    def test_matches_reference_scan_on_random_inputs(self):
        rng = np.random.default_rng(7)
        alphabet = list(string.ascii_lowercase[:6])

        def rand_domain(n_labels):
            return ".".join(
                "".join(rng.choice(alphabet, size=rng.integers(1, 3)))
                for _ in range(n_labels))

        seen = {}
        for _ in range(60):
            pattern = rand_domain(int(rng.integers(1, 4)))
            if rng.random() < 0.5:
                pattern = "*." + pattern
            seen[pattern] = f"svc{rng.integers(0, 20)}"
        patterns = list(seen.items())
        trie = SniTrie(patterns)
        for _ in range(500):
            domain = rand_domain(int(rng.integers(1, 5)))
            assert trie_match(trie, domain) == naive_match(patterns, domain), domain


# ---------------------------------------------------------------------------
# Filtering and anonymization


class TestFilterFlow:
    def test_keeps_valid_labeled_flow(self):
        record = make_flow([10, 20, 30], [1, -1, 1], [0.0, 1.0, 1.0],
                           label="svc")
        assert filter_flow(record) == (True, None)

    def test_drops_short_flow(self):
        record = make_flow([10, 20], [1, -1], [0.0, 1.0], label="svc")
        assert filter_flow(record) == (False, "short")

    def test_drops_unidirectional_flow(self):
        record = make_flow([10, 20, 30], [1, 1, 1], [0.0, 1.0, 1.0],
                           label="svc")
        assert filter_flow(record) == (False, "unidirectional")

    def test_drops_unlabeled_flow(self):
        record = make_flow([10, 20, 30], [1, -1, 1], [0.0, 1.0, 1.0])
        assert filter_flow(record) == (False, "no-sni")


def test_anonymize_strips_sni_keeps_label():
    record = make_flow([10, 20, 30], [1, -1, 1], [0.0, 1.0, 1.0],
                       label="svc", sni="a.svc.example")
    stripped = anonymize(record)
    assert stripped.sni is None
    assert stripped.label == "svc"
    with pytest.raises(ValueError, match="unlabeled"):
        anonymize(make_flow([10, 20, 30], [1, -1, 1], [0.0, 1.0, 1.0]))


# ---------------------------------------------------------------------------
# Sampler


class TestSampler:
    def test_ratio_ladder_endpoints(self):
        state = SamplerState()
        assert state.ratio_for_rank(1) == 15
        assert state.ratio_for_rank(20) == 15
        assert state.ratio_for_rank(21) == 9
        assert state.ratio_for_rank(100) == 2
        assert state.ratio_for_rank(101) == 1

    def test_modulo_keep_count(self):
        state = SamplerState()
        state.ratio_of = {"svc": 15}
        kept = sum(state.decide("svc") for _ in range(45))
        assert kept == 3
        assert state.offered["svc"] == 45
        assert state.kept["svc"] == 3

    def test_unranked_service_is_kept_in_full(self):
        state = SamplerState()
        assert all(state.decide("rare") for _ in range(10))

    def test_rerank_orders_by_offered_count(self):
        state = SamplerState(SamplerConfig(top_ranks=1, top_ratio=5,
                                           ladder_end=2, rerank_windows=2))
        for _ in range(10):
            state.decide("big")
        for _ in range(3):
            state.decide("small")
        state.rerank()
        assert state.ratio_of["big"] == 5
        assert state.ratio_of["small"] == 2

    def test_observe_window_reranks_on_period(self):
        state = SamplerState(SamplerConfig(rerank_windows=3))
        state.observe_window(0)
        state.decide("svc")
        state.observe_window(2)
        assert state.ratio_of == {}
        state.observe_window(3)
        assert "svc" in state.ratio_of


# ---------------------------------------------------------------------------
# Flow CSV round trip and parse errors


def _sample_records(n=20, label="svc", with_sni=False):
    profile = ServiceProfile(service=label, group="grp", template="grp")
    rng = np.random.default_rng(3)
    records = [sample_flow(profile, rng, window_ts=i // 7) for i in range(n)]
    if with_sni:
        records = [type(r)(pstats=r.pstats, stats=r.stats,
                           sni=f"x{i}.svc.example", label=r.label,
                           window_ts=r.window_ts)
                   for i, r in enumerate(records)]
    return records


class TestFlowFile:
    def test_round_trip_preserves_records(self, tmp_path):
        records = _sample_records()
        path = tmp_path / "flows.csv"
        assert write_flow_file(path, records) == len(records)
        assert list(read_flow_file(path)) == records

    def test_round_trip_with_sni_column(self, tmp_path):
        records = _sample_records(n=5, with_sni=True)
        path = tmp_path / "flows.csv"
        write_flow_file(path, records, with_sni=True)
        assert list(read_flow_file(path)) == records

    def test_missing_header(self, tmp_path):
        path = tmp_path / "flows.csv"
        path.write_text("")
        with pytest.raises(FlowParseError, match="missing header"):
            list(read_flow_file(path))

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "flows.csv"
        path.write_text("A,B,C\n")
        with pytest.raises(FlowParseError, match="unexpected header"):
            list(read_flow_file(path))

    def _one_row_file(self, tmp_path, **overrides):
        records = _sample_records(n=1)
        path = tmp_path / "flows.csv"
        write_flow_file(path, records)
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        row = lines[1].split(",")
        for column, value in overrides.items():
            row[header.index(column)] = value
        path.write_text("\n".join([lines[0], ",".join(row)]) + "\n")
        return path

    def test_bad_integer_reports_line_and_column(self, tmp_path):
        path = self._one_row_file(tmp_path, BYTES="oops")
        with pytest.raises(FlowParseError) as err:
            list(read_flow_file(path))
        assert err.value.line == 2
        assert err.value.column == "BYTES"

    def test_bad_direction_code(self, tmp_path):
        records = _sample_records(n=1)
        dirs = "|".join("2" for _ in records[0].pstats.dirs)
        path = self._one_row_file(tmp_path, PPI_DIRS=dirs)
        with pytest.raises(FlowParseError, match="direction code"):
            list(read_flow_file(path))

    def test_declared_length_mismatch(self, tmp_path):
        path = self._one_row_file(tmp_path, PPI_LEN="99")
        with pytest.raises(FlowParseError, match="declared length"):
            list(read_flow_file(path))

    def test_field_count_mismatch(self, tmp_path):
        records = _sample_records(n=1)
        path = tmp_path / "flows.csv"
        write_flow_file(path, records)
        with open(path, "a") as fh:
            fh.write("too,few,fields\n")
        with pytest.raises(FlowParseError, match="expected"):
            list(read_flow_file(path))


def test_quantizers_round_to_documented_precision():
    assert quantize_iat(1.23456) == 1.235
    assert quantize_iat(0.0004) == 0.0
    assert quantize_duration(1.23456789) == 1.234568


class TestWindowWriter:
    def test_one_file_per_window(self, tmp_path):
        rng = np.random.default_rng(0)
        records = [random_flow(rng, label="svc", window_ts=w)
                   for w in (0, 0, 2, 2, 2, 5)]
        with WindowWriter(tmp_path) as writer:
            for record in records:
                writer.write(record)
        names = [p.split("/")[-1] for p in writer.files_written]
        assert names == ["flows_0.csv", "flows_2.csv", "flows_5.csv"]
        assert len(list(read_flow_file(tmp_path / "flows_2.csv"))) == 3

    def test_rejects_decreasing_window(self, tmp_path):
        rng = np.random.default_rng(0)
        with WindowWriter(tmp_path) as writer:
            writer.write(random_flow(rng, label="svc", window_ts=3))
            with pytest.raises(ValueError, match="after window"):
                writer.write(random_flow(rng, label="svc", window_ts=1))


# ---------------------------------------------------------------------------
# Taxonomy file


class TestTaxonomyFile:
    def test_round_trip(self, tmp_path):
        taxonomy = ServiceTaxonomy(
            services=["video", "mail", "bare"],
            group_of={"video": "media", "mail": "comms", "bare": "comms"},
            patterns=[("*.video.example", "video"),
                      ("smtp.mail.example", "mail")])
        path = tmp_path / "taxonomy.csv"
        write_taxonomy(path, taxonomy)
        loaded = read_taxonomy(path)
        assert loaded.services == taxonomy.services
        assert loaded.group_of == taxonomy.group_of
        assert loaded.patterns == taxonomy.patterns

    def test_rejects_conflicting_groups(self, tmp_path):
        path = tmp_path / "taxonomy.csv"
        path.write_text("PATTERN,SERVICE,GROUP\n,svc,g1\n,svc,g2\n")
        with pytest.raises(ValueError, match="two groups"):
            read_taxonomy(path)

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "taxonomy.csv"
        path.write_text("A,B\n")
        with pytest.raises(ValueError, match="header"):
            read_taxonomy(path)
