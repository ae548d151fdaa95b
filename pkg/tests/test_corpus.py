"""Vocabulary, tokenization and event extraction tests."""

import io

import numpy as np
import pytest

from maxentlm.corpus import (
    END,
    START,
    UNK,
    CorpusError,
    Events,
    Vocabulary,
    build_vocabulary,
    extract_events,
    tokenize,
)


class TestBuildVocabulary:
    def test_frequency_order(self):
        vocab = build_vocabulary(["a b a"], max_size=10)
        assert vocab.lookup("a") < vocab.lookup("b")
        assert vocab.content_size == 2
        assert vocab.lookup("a") == 3  # reserved tokens take 0..2

    def test_max_size_caps_content_words(self):
        # 70k distinct tokens, all tied; first occurrence breaks ties.
        line = " ".join(f"t{i}" for i in range(70_000))
        vocab = build_vocabulary([line], max_size=60_000)
        assert vocab.content_size == 60_000
        assert vocab.lookup("t0") == 3
        assert vocab.lookup("t59999") == 60_002
        assert vocab.lookup("t60000") == UNK

    def test_small_cap_drops_rare_word(self):
        # counts: x=3, y=2, z=1
        vocab = build_vocabulary(["x y z x y x"], max_size=2)
        assert vocab.lookup("x") == 3
        assert vocab.lookup("y") == 4
        assert vocab.lookup("z") == UNK

    def test_tie_broken_by_first_occurrence(self):
        vocab = build_vocabulary(["b a b a"], max_size=10)
        assert vocab.lookup("b") < vocab.lookup("a")

    def test_empty_corpus_rejected(self):
        with pytest.raises(CorpusError):
            build_vocabulary(["", "   "])

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CorpusError):
            build_vocabulary(tmp_path / "nope.txt")

    def test_lowercase_flag(self):
        vocab = build_vocabulary(["The THE the"], max_size=10, lowercase=True)
        assert vocab.content_size == 1
        assert vocab.lookup("the") == 3


class TestVocabularyFile:
    def test_round_trip_preserves_ids(self, tmp_path):
        vocab = build_vocabulary(["c a b a c c"], max_size=10)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.words == vocab.words
        assert loaded.index == vocab.index
        # reserved tokens occupy the first three lines
        lines = path.read_text().splitlines()
        assert lines[:3] == ["<s>", "</s>", "<unk>"]

    def test_load_rejects_missing_reserved(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n")
        with pytest.raises(CorpusError):
            Vocabulary.load(path)


class TestTokenize:
    def test_known_words(self):
        vocab = build_vocabulary(["the cat"], max_size=10)
        stream = tokenize(["the cat"], vocab)
        assert stream.sentences[0].tolist() == [
            vocab.lookup("the"),
            vocab.lookup("cat"),
        ]

    def test_oov_becomes_unknown(self):
        vocab = build_vocabulary(["the cat"], max_size=10)
        stream = tokenize(["the dog"], vocab)
        assert stream.sentences[0].tolist() == [vocab.lookup("the"), UNK]

    def test_empty_line_gives_empty_sentence(self):
        vocab = build_vocabulary(["a"], max_size=10)
        stream = tokenize(["a", "", "a"], vocab)
        assert [len(s) for s in stream.sentences] == [1, 0, 1]
        assert len(extract_events(stream)) > 0

    def test_bad_encoding_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_bytes(b"fine line\n\xff\xfe broken\n")
        vocab = build_vocabulary(["fine line"], max_size=10)
        with pytest.raises(CorpusError, match="line 2"):
            tokenize(path, vocab)


class TestExtractEvents:
    def _events(self, text_lines, max_size=100):
        vocab = build_vocabulary(text_lines, max_size=max_size)
        return vocab, extract_events(tokenize(text_lines, vocab))

    def test_single_word_sentence_padding(self):
        vocab, events = self._events(["a"])
        rows = list(events)
        assert len(rows) == 1
        assert rows[0].history == (START, START)
        assert rows[0].target == vocab.lookup("a")
        assert rows[0].count == 1

    def test_three_word_sentence(self):
        vocab, events = self._events(["a b c"])
        a, b, c = (vocab.lookup(w) for w in "abc")
        triples = {(e.history, e.target) for e in events}
        assert triples == {
            ((START, START), a),
            ((START, a), b),
            ((a, b), c),
        }

    def test_repeated_sentence_merges_counts(self):
        vocab, events = self._events(["a b", "a b"])
        a, b = vocab.lookup("a"), vocab.lookup("b")
        by_triple = {(e.history, e.target): e.count for e in events}
        assert by_triple[((START, a), b)] == 2
        assert by_triple[((START, START), a)] == 2

    def test_count_mass_equals_token_count(self):
        rng = np.random.default_rng(7)
        lines = [
            " ".join(f"w{rng.integers(0, 20)}" for _ in range(rng.integers(1, 9)))
            for _ in range(50)
        ]
        vocab = build_vocabulary(lines, max_size=100)
        stream = tokenize(lines, vocab)
        events = extract_events(stream)
        assert events.total_count() == stream.num_tokens()

    def test_sentence_end_never_a_target(self):
        _, events = self._events(["a b", "c"])
        assert END not in set(events.target.tolist())

    def test_merged_is_sorted_and_unique(self):
        _, events = self._events(["a b a b a", "b a b"])
        keys = list(zip(events.h2, events.h1, events.target))
        assert keys == sorted(keys)
        assert len(keys) == len(set(keys))
