"""Benchmark harness tests: rows, cost cross-checks, determinism, figure."""

import numpy as np
import pytest

from corpusgen import generate_corpus
from maxentlm.benchmark import (
    BenchConfig,
    BenchmarkError,
    benchmark,
    default_level_sizes,
    render_speed_figure,
    truncate_to_tokens,
)
from maxentlm.corpus import build_vocabulary, extract_events, tokenize


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(6_000, seed=5, inventory=300, n_groups=6)


@pytest.fixture(scope="module")
def small_report(small_corpus):
    config = BenchConfig(max_vocab=1000, min_count=3, indicator_classes=16,
                         iterations=1)
    return benchmark(["gis", "factored2"], [2_000, 5_000], small_corpus,
                     config)


class TestBenchmark:
    def test_row_count_is_methods_times_sizes(self, small_report):
        assert len(small_report.rows) == 4

    def test_baseline_relative_speed_is_one(self, small_report):
        for row in small_report.rows:
            if row.method == "gis":
                assert row.relative_speed == 1.0

    def test_baseline_ops_equal_vocab_size(self, small_report):
        for row in small_report.rows:
            if row.method == "gis":
                assert row.ops_per_event == pytest.approx(row.vocab_size)

    def test_factored_ops_match_analytic_cost(self, small_corpus):
        """Measured factored cost equals class count plus mean member scans."""
        from maxentlm.classing import build_hierarchy

        config = BenchConfig(max_vocab=1000, min_count=3,
                             indicator_classes=16, iterations=1)
        report = benchmark(["gis", "factored2"], [4_000], small_corpus, config)
        row = {r.method: r for r in report.rows}["factored2"]
        lines = truncate_to_tokens(small_corpus, 4_000)
        vocab = build_vocabulary(lines, max_size=1000)
        events = extract_events(tokenize(lines, vocab))
        sizes = default_level_sizes(len(vocab), 2)
        hierarchy = build_hierarchy(events, vocab, sizes)
        from maxentlm.factored import factor_events

        level_events = factor_events(events, hierarchy)
        class_ops = len(level_events[0]) * sizes[0]
        # word-level events are the original events relabeled one-to-one,
        # each scanning its target's whole class
        member_sizes = np.bincount(hierarchy.paths[:, 0], minlength=sizes[0])
        word_ops = int(member_sizes[hierarchy.paths[events.target, 0]].sum())
        assert row.ops_per_event == pytest.approx(
            (class_ops + word_ops) / len(events)
        )

    def test_ops_deterministic_across_runs(self, small_corpus):
        config = BenchConfig(max_vocab=500, min_count=3, indicator_classes=8,
                             iterations=1)
        a = benchmark(["factored2"], [3_000], small_corpus, config)
        b = benchmark(["factored2"], [3_000], small_corpus, config)
        assert [r.ops_per_event for r in a.rows] == \
            [r.ops_per_event for r in b.rows]

    def test_unknown_method_rejected(self, small_corpus):
        with pytest.raises(BenchmarkError):
            benchmark(["newton"], [1_000], small_corpus)

    def test_oversized_request_rejected(self, small_corpus):
        with pytest.raises(BenchmarkError):
            benchmark(["gis"], [10_000_000], small_corpus)


class TestReportFiles:
    def test_tsv_format(self, small_report, tmp_path):
        path = tmp_path / "report.tsv"
        small_report.to_tsv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == \
            "method\ttrain_size\tsec_per_iter\tops_per_event\trelative_speed"
        assert len(lines) == 1 + len(small_report.rows)
        for line in lines[1:]:
            cols = line.split("\t")
            assert len(cols) == 5
            int(cols[1])
            float(cols[2]), float(cols[3]), float(cols[4])

    def test_figure_rendered(self, small_report, tmp_path):
        path = tmp_path / "speedup.png"
        render_speed_figure(small_report, path)
        data = path.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(data) > 5_000


class TestLevelSizes:
    def test_square_root_spacing(self):
        assert default_level_sizes(10_000, 2) == [100]

    def test_cube_root_spacing(self):
        sizes = default_level_sizes(1_000, 3)
        assert sizes == [10, 100]

    def test_small_vocab_stays_increasing(self):
        sizes = default_level_sizes(5, 3)
        assert 1 <= sizes[0] < sizes[1] <= 5
