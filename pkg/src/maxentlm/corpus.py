"""Corpus ingestion: vocabulary construction, tokenization, event extraction."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

START, END, UNK = 0, 1, 2
RESERVED = ("<s>", "</s>", "<unk>")

DEFAULT_MAX_VOCAB = 60000


class CorpusError(Exception):
    """Unreadable or malformed corpus input."""


def _iter_lines(source) -> Iterator[str]:
    """Yield text lines from a path or an iterable of strings.

    Decoding is done line by line so that a bad byte sequence can be
    reported with its line number.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = path.open("rb")
        except OSError as exc:
            raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
        with raw:
            for lineno, line in enumerate(raw, start=1):
                try:
                    yield line.decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise CorpusError(
                        f"{path}: invalid UTF-8 on line {lineno}: {exc}"
                    ) from exc
    else:
        yield from source


class Vocabulary:
    """Bidirectional word/id map, frequency ordered, with reserved tokens.

    Ids are dense.  Ids 0, 1, 2 are the sentence-start, sentence-end and
    unknown tokens; content words follow in descending training-count
    order (ties broken by first occurrence in the corpus).
    """

    def __init__(self, content_words: Sequence[str]):
        self.words: list[str] = list(RESERVED) + list(content_words)
        self.index: dict[str, int] = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.words)

    @property
    def content_size(self) -> int:
        return len(self.words) - len(RESERVED)

    def lookup(self, token: str) -> int:
        """Map a token to its id, falling back to the unknown id."""
        return self.index.get(token, UNK)

    def __getitem__(self, word_id: int) -> str:
        return self.words[word_id]

    def save(self, path) -> None:
        """Write one token per line; reserved tokens come first."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for word in self.words:
                fh.write(word + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = [ln.rstrip("\n") for ln in _iter_lines(path)]
        lines = [ln for ln in lines if ln]
        if tuple(lines[:3]) != RESERVED:
            raise CorpusError(
                f"{path}: vocabulary file must start with {' '.join(RESERVED)}"
            )
        return cls(lines[3:])


@dataclass(frozen=True)
class TokenStream:
    """Sentences as id sequences.  Boundary ids are implicit, not stored."""

    sentences: list  # list of np.ndarray(int32)

    def num_tokens(self) -> int:
        return int(sum(len(s) for s in self.sentences))


@dataclass(frozen=True)
class Event:
    """A prediction site: two-word history, target word, multiplicity."""

    history: tuple[int, int]  # (w_{i-2}, w_{i-1})
    target: int
    count: int


class Events:
    """Columnar event storage, merged over identical (history, target)."""

    __slots__ = ("h2", "h1", "target", "count")

    def __init__(self, h2, h1, target, count):
        self.h2 = np.asarray(h2, dtype=np.int32)
        self.h1 = np.asarray(h1, dtype=np.int32)
        self.target = np.asarray(target, dtype=np.int32)
        self.count = np.asarray(count, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.target)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.target)):
            yield Event(
                (int(self.h2[i]), int(self.h1[i])),
                int(self.target[i]),
                int(self.count[i]),
            )

    def total_count(self) -> int:
        return int(self.count.sum())

    def merged(self, num_ids: int) -> "Events":
        """Merge identical (history, target) triples, summing counts.

        The result is sorted by (h2, h1, target), which fixes a
        deterministic event order for training.
        """
        v = np.int64(num_ids)
        key = (self.h2.astype(np.int64) * v + self.h1) * v + self.target
        uniq, inverse = np.unique(key, return_inverse=True)
        count = np.bincount(inverse, weights=self.count, minlength=len(uniq))
        t = uniq % v
        rest = uniq // v
        h1 = rest % v
        h2 = rest // v
        return Events(h2, h1, t, count.astype(np.int64))


def build_vocabulary(source, max_size: int = DEFAULT_MAX_VOCAB,
                     lowercase: bool = False) -> Vocabulary:
    """Build a vocabulary of the ``max_size`` most frequent tokens.

    ``max_size`` caps the number of content words; the three reserved
    tokens are always present on top of that.  Ties are broken by first
    occurrence.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_tokens = 0
    for line in _iter_lines(source):
        if lowercase:
            line = line.lower()
        for tok in line.split():
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = n_tokens
            n_tokens += 1
    if n_tokens == 0:
        raise CorpusError("empty corpus: no tokens found")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    content = [t for t in ranked[:max_size] if t not in RESERVED]
    return Vocabulary(content)


def tokenize(source, vocab: Vocabulary, lowercase: bool = False) -> TokenStream:
    """Map a corpus to id sequences, one sentence per input line.

    Tokens outside the vocabulary become the unknown id.  Empty lines
    yield empty sentences, which contribute no events downstream.
    """
    sentences = []
    lookup = vocab.index
    for line in _iter_lines(source):
        if lowercase:
            line = line.lower()
        ids = [lookup.get(tok, UNK) for tok in line.split()]
        sentences.append(np.asarray(ids, dtype=np.int32))
    return TokenStream(sentences)


def extract_events(stream: TokenStream) -> Events:
    """Extract one (history, target) event per token position.

    Histories are the two preceding word ids, padded with the
    sentence-start id at sentence openings.  The sentence-end token is
    never a target.  Identical triples are merged with summed counts, so
    the total count mass equals the corpus token count.
    """
    h2_parts, h1_parts, t_parts = [], [], []
    max_id = UNK
    for ids in stream.sentences:
        n = len(ids)
        if n == 0:
            continue
        h1 = np.empty(n, dtype=np.int32)
        h2 = np.empty(n, dtype=np.int32)
        h1[0] = START
        h1[1:] = ids[:-1]
        h2[:2] = START
        h2[2:] = ids[:-2]
        h2_parts.append(h2)
        h1_parts.append(h1)
        t_parts.append(ids)
        max_id = max(max_id, int(ids.max()))
    if not t_parts:
        return Events([], [], [], [])
    h2 = np.concatenate(h2_parts)
    h1 = np.concatenate(h1_parts)
    t = np.concatenate(t_parts)
    raw = Events(h2, h1, t, np.ones(len(t), dtype=np.int64))
    return raw.merged(max_id + 1)
