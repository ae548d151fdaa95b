"""Factored-model tests: exactness, cost model, and round trips."""

import numpy as np
import pytest

from maxentlm.classing import ClassHierarchy, induce_classes
from maxentlm.corpus import Events, build_vocabulary, extract_events, tokenize
from maxentlm.factored import (
    FactoredError,
    FactoredModel,
    factor_events,
    level_specs,
    load_model_dir,
    save_model_dir,
    train_factored,
)
from maxentlm.features import instantiate
from maxentlm.gis import CandidateSpace, build_model, expectation_pass, train


def balanced_hierarchy(num_words, level_blocks):
    """Evenly sized nested classes: level_blocks like (10,) or (10, 100)."""
    cols = []
    for blocks in level_blocks:
        size = num_words // blocks
        cols.append(np.minimum(np.arange(num_words) // size, blocks - 1))
    paths = np.stack(cols, axis=1).astype(np.int32)
    return ClassHierarchy(paths, tuple(level_blocks))


def corpus_problem(seed, n_lines=60, vocab_n=20, line_len=8, max_size=100):
    rng = np.random.default_rng(seed)
    lines = [
        " ".join(f"w{rng.integers(0, vocab_n)}" for _ in range(line_len))
        for _ in range(n_lines)
    ]
    vocab = build_vocabulary(lines, max_size=max_size)
    events = extract_events(tokenize(lines, vocab))
    return vocab, events


def synthetic_events(num_words, n_events):
    """Events with pairwise-distinct histories (no merging at any level)."""
    idx = np.arange(n_events)
    return Events(idx % num_words, (idx * 7 + 1) % num_words,
                  (idx * 13 + 2) % num_words, np.ones(n_events, dtype=np.int64))


class TestFactorEvents:
    def test_counts_preserved_per_level(self):
        vocab, events = corpus_problem(0)
        hierarchy = induce_classes(events, vocab, 4)
        per_level = factor_events(events, hierarchy)
        assert len(per_level) == 2
        for ev in per_level:
            assert ev.total_count() == events.total_count()

    def test_level_targets_aggregate_original_counts(self):
        vocab, events = corpus_problem(1)
        hierarchy = induce_classes(events, vocab, 3)
        level0 = factor_events(events, hierarchy)[0]
        # recount by hand: histories with class-coarsened targets
        from collections import Counter

        want = Counter()
        for ev in events:
            cls = hierarchy.class_of(ev.target, 0)
            want[(ev.history, cls)] += ev.count
        got = Counter()
        for ev in level0:
            got[(ev.history, ev.target)] += ev.count
        assert got == want

    def test_singleton_classes_make_word_level_trivial(self):
        vocab, events = corpus_problem(2, vocab_n=8)
        hierarchy = induce_classes(events, vocab, len(vocab))
        specs = level_specs(hierarchy, len(vocab))
        word_space = specs[-1].space
        widths = word_space.group_hi - word_space.group_lo
        assert np.all(widths == 1)

    def test_target_outside_hierarchy_rejected(self):
        vocab, events = corpus_problem(3)
        hierarchy = induce_classes(events, vocab, 2)
        small = ClassHierarchy(hierarchy.paths[:4], hierarchy.sizes)
        with pytest.raises(FactoredError):
            factor_events(events, small)


class TestTrainFactored:
    def test_identity_factoring_matches_unfactored(self):
        vocab, events = corpus_problem(4, vocab_n=10)
        hierarchy = induce_classes(events, vocab, 1)
        indicator = np.zeros(len(vocab), dtype=np.int32)
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=2,
                                   iterations=8, tolerance=0.0)
        fset = instantiate(events, indicator, threshold=2,
                           num_targets=len(vocab))
        base = build_model(fset, CandidateSpace.full("words", len(vocab)),
                           events)
        base, _ = train(base, events, iterations=8, tolerance=0.0)
        word_level = fmodel.models[-1]
        assert word_level.slack_c == base.slack_c
        np.testing.assert_allclose(word_level.lambdas, base.lambdas,
                                   atol=1e-9)
        # the single-class level is a one-candidate model: probability 1
        rng = np.random.default_rng(5)
        for _ in range(20):
            h2, h1, w = rng.integers(0, len(vocab), size=3)
            lp = fmodel.models[0].log_prob((int(h2), int(h1)), 0)
            assert lp == pytest.approx(0.0, abs=1e-15)

    def test_cost_model_exact_on_balanced_hierarchy(self):
        # 100 words in 10 classes of 10: class pass scans 10, word pass 10.
        # Distinct histories keep per-level event counts equal.
        events = synthetic_events(100, 60)
        hierarchy = balanced_hierarchy(100, (10,))
        indicator = np.zeros(100, dtype=np.int32)
        fmodel, logs = train_factored(events, hierarchy, indicator,
                                      threshold=3, iterations=1,
                                      tolerance=0.0, vocab_size=100)
        assert logs[0][0].op_count == len(events) * 10
        assert logs[1][0].op_count == len(events) * 10

    def test_three_level_cost(self):
        # 1000 words, 10 super-classes, 100 classes: 10 + 10 + 10 per event
        events = synthetic_events(1000, 80)
        hierarchy = balanced_hierarchy(1000, (10, 100))
        indicator = np.zeros(1000, dtype=np.int32)
        fmodel, logs = train_factored(events, hierarchy, indicator,
                                      threshold=3, iterations=1,
                                      tolerance=0.0, vocab_size=1000)
        for level in range(3):
            assert logs[level][0].op_count == len(events) * 10


class TestProbability:
    def test_uniform_on_balanced_two_level(self):
        vocab, events = corpus_problem(8, vocab_n=97, n_lines=30)
        hierarchy = balanced_hierarchy(100, (10,))
        indicator = np.zeros(100, dtype=np.int32)
        # huge tolerance: stop after the first pass with zero weights
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=3,
                                   iterations=1, tolerance=1e9)
        for model in fmodel.models:
            assert np.all(model.lambdas == 0.0)
        rng = np.random.default_rng(9)
        for _ in range(10):
            h2, h1, w = rng.integers(0, 100, size=3)
            p = fmodel.probability((int(h2), int(h1)), int(w))
            assert p == pytest.approx(0.01, rel=1e-12)

    def test_distribution_sums_to_one(self):
        vocab, events = corpus_problem(10, vocab_n=30)
        hierarchy = induce_classes(events, vocab, 5)
        indicator = induce_classes(events, vocab, 4).paths[:, 0]
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=2,
                                   iterations=6, tolerance=0.0)
        rng = np.random.default_rng(11)
        for _ in range(25):
            h2, h1 = rng.integers(0, len(vocab), size=2)
            dist = fmodel.distribution((int(h2), int(h1)))
            assert abs(dist.sum() - 1.0) <= 1e-9

    def test_distribution_matches_pointwise_probability(self):
        vocab, events = corpus_problem(12, vocab_n=15)
        hierarchy = induce_classes(events, vocab, 3)
        indicator = np.zeros(len(vocab), dtype=np.int32)
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=2,
                                   iterations=5, tolerance=0.0)
        rng = np.random.default_rng(13)
        for _ in range(10):
            h2, h1 = rng.integers(0, len(vocab), size=2)
            dist = fmodel.distribution((int(h2), int(h1)))
            for w in rng.integers(0, len(vocab), size=5):
                assert dist[int(w)] == pytest.approx(
                    fmodel.probability((int(h2), int(h1)), int(w)), rel=1e-12
                )

    def test_word_level_groups_partition_exactly_by_class(self):
        vocab, events = corpus_problem(14, vocab_n=40)
        hierarchy = induce_classes(events, vocab, 6)
        specs = level_specs(hierarchy, len(vocab))
        word_spec = specs[-1]
        space = word_spec.space
        for cid in range(6):
            members = set(hierarchy.members(0, cid).tolist())
            enc = word_spec.encode[sorted(members)]
            groups = set(int(space.group_of[e]) for e in enc)
            assert len(groups) == 1  # one contiguous group per class
            g = groups.pop()
            lo, hi = int(space.group_lo[g]), int(space.group_hi[g])
            decoded = set(int(word_spec.decode[i]) for i in range(lo, hi))
            assert decoded == members


class TestExactnessAtTruth:
    def _check_factoring_identity(self, rng, num_words, sizes):
        """Factored conditionals from a joint table reproduce it exactly."""
        hierarchy = balanced_hierarchy(num_words, sizes)
        n_hist = 7
        table = rng.random((n_hist, num_words)) + 1e-3
        table /= table.sum(axis=1, keepdims=True)
        for h in range(n_hist):
            for w in range(num_words):
                p = 1.0
                lo = np.zeros(num_words, dtype=bool)
                lo[:] = True
                for level in range(hierarchy.levels):
                    in_class = hierarchy.paths[:, level] == \
                        hierarchy.paths[w, level]
                    p_class = table[h, lo & in_class].sum() / \
                        table[h, lo].sum()
                    p *= p_class
                    lo &= in_class
                p *= table[h, w] / table[h, lo].sum()
                assert abs(p - table[h, w]) <= 1e-12

    def test_two_level_identity(self):
        self._check_factoring_identity(np.random.default_rng(15), 12, (3,))

    def test_three_level_identity(self):
        self._check_factoring_identity(np.random.default_rng(16), 12, (2, 4))


class TestModelDirectory:
    def test_factored_round_trip_bit_identical(self, tmp_path):
        vocab, events = corpus_problem(17, vocab_n=25)
        hierarchy = induce_classes(events, vocab, 4)
        indicator = induce_classes(events, vocab, 3).paths[:, 0]
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=2,
                                   iterations=6, tolerance=0.0)
        save_model_dir(tmp_path / "m", vocab, indicator, fmodel, "factored2")
        loaded, vocab2, indicator2 = load_model_dir(tmp_path / "m")
        assert vocab2.words == vocab.words
        np.testing.assert_array_equal(indicator2, indicator)
        rng = np.random.default_rng(18)
        for _ in range(200):
            h2, h1, w = rng.integers(0, len(vocab), size=3)
            a = fmodel.log_probability((int(h2), int(h1)), int(w))
            b = loaded.log_probability((int(h2), int(h1)), int(w))
            assert a == b  # bitwise

    def test_unfactored_round_trip(self, tmp_path):
        vocab, events = corpus_problem(19, vocab_n=12)
        indicator = np.zeros(len(vocab), dtype=np.int32)
        fset = instantiate(events, indicator, threshold=2,
                           num_targets=len(vocab))
        model = build_model(fset, CandidateSpace.full("words", len(vocab)),
                            events)
        model, _ = train(model, events, iterations=4, tolerance=0.0)
        save_model_dir(tmp_path / "m", vocab, indicator, model, "gis")
        loaded, _, _ = load_model_dir(tmp_path / "m")
        rng = np.random.default_rng(20)
        for _ in range(100):
            h2, h1, w = rng.integers(0, len(vocab), size=3)
            assert loaded.log_prob((int(h2), int(h1)), int(w)) == \
                model.log_prob((int(h2), int(h1)), int(w))

    def test_manifest_lists_levels_in_order(self, tmp_path):
        import json

        vocab, events = corpus_problem(21, vocab_n=30)
        hierarchy = induce_classes(events, vocab, 3)
        indicator = np.zeros(len(vocab), dtype=np.int32)
        fmodel, _ = train_factored(events, hierarchy, indicator, threshold=3,
                                   iterations=1, tolerance=0.0)
        save_model_dir(tmp_path / "m", vocab, indicator, fmodel, "factored2")
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["levels"] == ["level0.model", "level1.model"]
        assert manifest["hierarchy"] == "hierarchy.map"
        assert (tmp_path / "m" / "hierarchy.map").exists()
