"""Word classing by greedy top-down splitting of the vocabulary.

Words are grouped so that a class-bigram model over the training events
loses as little log-likelihood as possible.  The procedure starts from a
single class holding the whole vocabulary and repeatedly splits one class
in two: the split is seeded by alternating frequency-sorted members and
then refined by exchange passes that move single words across the split
while that improves the global class-bigram objective.  Splitting the
class with the largest internal entropy first, and continuing until each
requested level size is reached, yields nested partitions: every class
produced later refines exactly one class produced earlier.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix

from .corpus import Events, Vocabulary

MAX_EXCHANGE_PASSES = 20
_MOVE_EPS = 1e-6  # objective gains below this are float noise


class ClassingError(Exception):
    """Invalid class request or malformed class-map file."""


def _xlogx(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    mask = n > 0
    out[mask] = n[mask] * np.log(n[mask])
    return out


def _xlogx_s(n) -> float:
    return float(n) * np.log(n) if n > 0 else 0.0


@dataclass(frozen=True)
class ClassHierarchy:
    """Per-word class path over one to three levels.

    ``paths[w, k]`` is the class id of word ``w`` at level ``k``; level 0
    is the coarsest.  Ids at each level are dense and every class is
    non-empty.  Finer levels nest inside coarser ones.
    """

    paths: np.ndarray  # (V, levels) int32
    sizes: tuple[int, ...]

    @property
    def levels(self) -> int:
        return self.paths.shape[1]

    @property
    def num_words(self) -> int:
        return self.paths.shape[0]

    def class_of(self, word_id: int, level: int = -1) -> int:
        return int(self.paths[word_id, level])

    def members(self, level: int, class_id: int) -> np.ndarray:
        return np.nonzero(self.paths[:, level] == class_id)[0]

    def validate(self) -> None:
        """Check density, non-emptiness and nesting; raise on violation."""
        for k, size in enumerate(self.sizes):
            col = self.paths[:, k]
            present = np.unique(col)
            if col.min() < 0 or col.max() >= size or len(present) != size:
                raise ClassingError(
                    f"level {k}: class ids not dense over 0..{size - 1}"
                )
        for k in range(1, self.levels):
            # each finer class must sit inside exactly one coarser class
            pairs = np.unique(
                self.paths[:, k].astype(np.int64) * self.sizes[k - 1]
                + self.paths[:, k - 1]
            )
            fine = pairs // self.sizes[k - 1]
            if len(np.unique(fine)) != len(fine):
                raise ClassingError(f"level {k} classes span multiple parents")

    def save(self, path, vocab: Vocabulary) -> None:
        """Write ``word<TAB>c0[/c1[/c2]]``, one line per word in id order."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for w in range(self.num_words):
                chain = "/".join(str(int(c)) for c in self.paths[w])
                fh.write(f"{vocab[w]}\t{chain}\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "ClassHierarchy":
        paths = np.full((len(vocab), 0), 0, dtype=np.int32)
        rows: dict[int, tuple[int, ...]] = {}
        levels = None
        for lineno, line in enumerate(Path(path).open(encoding="utf-8"), 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, chain = line.split("\t")
                ids = tuple(int(c) for c in chain.split("/"))
            except ValueError as exc:
                raise ClassingError(f"{path}:{lineno}: bad class map line") from exc
            if levels is None:
                levels = len(ids)
            elif len(ids) != levels:
                raise ClassingError(f"{path}:{lineno}: inconsistent level count")
            wid = vocab.index.get(word)
            if wid is None:
                raise ClassingError(f"{path}:{lineno}: unknown word {word!r}")
            rows[wid] = ids
        if levels is None or len(rows) != len(vocab):
            raise ClassingError(f"{path}: class map does not cover the vocabulary")
        paths = np.zeros((len(vocab), levels), dtype=np.int32)
        for wid, ids in rows.items():
            paths[wid] = ids
        sizes = tuple(int(paths[:, k].max()) + 1 for k in range(levels))
        hierarchy = cls(paths, sizes)
        hierarchy.validate()
        return hierarchy


def partition_objective(events: Events, assignment: np.ndarray) -> float:
    """Class-bigram training log-likelihood of an assignment, from scratch.

    The model scored is P(v|u) = P(class(v)|class(u)) * P(v|class(v)) with
    maximum-likelihood estimates over the event bigrams (h1 -> target).
    """
    assignment = np.asarray(assignment)
    cu = assignment[events.h1].astype(np.int64)
    cv = assignment[events.target].astype(np.int64)
    k = int(assignment.max()) + 1
    cc = np.bincount(cu * k + cv, weights=events.count, minlength=k * k)
    cl = np.bincount(cu, weights=events.count, minlength=k)
    cr = np.bincount(cv, weights=events.count, minlength=k)
    nr = np.bincount(events.target, weights=events.count,
                     minlength=len(assignment))
    return float(
        _xlogx(cc).sum() - _xlogx(cl).sum() - _xlogx(cr).sum() + _xlogx(nr).sum()
    )


class _Node:
    __slots__ = ("slot", "members", "children", "entropy")

    def __init__(self, slot, members):
        self.slot = slot
        self.members = members  # list of word ids; None for internal nodes
        self.children = None
        self.entropy = None


class _Splitter:
    """Incremental state for top-down splitting.

    Keeps the class-bigram count table, its margins and the running
    objective consistent under single-word moves, so each exchange step
    costs O(bigram degree of the word) instead of a full recount.
    """

    def __init__(self, events: Events, num_words: int, max_slots: int):
        self.num_words = num_words
        self.max_slots = max_slots
        total = events.total_count()
        self.out = coo_matrix(
            (events.count, (events.h1, events.target)),
            shape=(num_words, num_words),
        ).tocsr()
        self.inm = self.out.T.tocsr()
        self.out.sort_indices()
        self.inm.sort_indices()
        self.nr_word = np.bincount(
            events.target, weights=events.count, minlength=num_words
        ).astype(np.int64)
        self.leaf_of = np.zeros(num_words, dtype=np.int32)
        self.cc = np.zeros((max_slots, max_slots), dtype=np.int64)
        self.cl = np.zeros(max_slots, dtype=np.int64)
        self.cr = np.zeros(max_slots, dtype=np.int64)
        self.cc[0, 0] = total
        self.cl[0] = total
        self.cr[0] = total
        self.next_slot = 1
        self.objective = (
            _xlogx_s(total) - 2.0 * _xlogx_s(total) + _xlogx(self.nr_word).sum()
        )

    def _leaf_counts(self, w: int, mat) -> np.ndarray:
        lo, hi = mat.indptr[w], mat.indptr[w + 1]
        return np.bincount(
            self.leaf_of[mat.indices[lo:hi]],
            weights=mat.data[lo:hi],
            minlength=self.max_slots,
        ).astype(np.int64)

    def _self_count(self, w: int) -> int:
        lo, hi = self.out.indptr[w], self.out.indptr[w + 1]
        idx = self.out.indices[lo:hi]
        pos = np.searchsorted(idx, w)
        if pos < len(idx) and idx[pos] == w:
            return int(self.out.data[lo + pos])
        return 0

    def move_delta(self, w: int, dst: int):
        """Objective change if word ``w`` moves from its leaf to ``dst``."""
        src = int(self.leaf_of[w])
        o = self._leaf_counts(w, self.out)
        iv = self._leaf_counts(w, self.inm)
        s = self._self_count(w)
        to, ti = int(o.sum()), int(iv.sum())
        cc, cl, cr = self.cc, self.cl, self.cr
        nz = np.nonzero((o != 0) | (iv != 0))[0]
        nz = nz[(nz != src) & (nz != dst)]
        delta = 0.0
        if len(nz):
            on, ivn = o[nz], iv[nz]
            delta += (_xlogx(cc[src, nz] - on) - _xlogx(cc[src, nz])).sum()
            delta += (_xlogx(cc[dst, nz] + on) - _xlogx(cc[dst, nz])).sum()
            delta += (_xlogx(cc[nz, src] - ivn) - _xlogx(cc[nz, src])).sum()
            delta += (_xlogx(cc[nz, dst] + ivn) - _xlogx(cc[nz, dst])).sum()
        delta += _xlogx_s(cc[src, src] - o[src] - iv[src] + s) - _xlogx_s(cc[src, src])
        delta += _xlogx_s(cc[src, dst] - o[dst] + iv[src] - s) - _xlogx_s(cc[src, dst])
        delta += _xlogx_s(cc[dst, src] + o[src] - s - iv[dst]) - _xlogx_s(cc[dst, src])
        delta += _xlogx_s(cc[dst, dst] + o[dst] + iv[dst] + s) - _xlogx_s(cc[dst, dst])
        delta -= _xlogx_s(cl[src] - to) - _xlogx_s(cl[src])
        delta -= _xlogx_s(cl[dst] + to) - _xlogx_s(cl[dst])
        delta -= _xlogx_s(cr[src] - ti) - _xlogx_s(cr[src])
        delta -= _xlogx_s(cr[dst] + ti) - _xlogx_s(cr[dst])
        return delta, (o, iv, s, to, ti)

    def apply_move(self, w: int, dst: int, aux) -> None:
        src = int(self.leaf_of[w])
        o, iv, s, to, ti = aux
        cc = self.cc
        nz = np.nonzero((o != 0) | (iv != 0))[0]
        nz = nz[(nz != src) & (nz != dst)]
        cc[src, nz] -= o[nz]
        cc[dst, nz] += o[nz]
        cc[nz, src] -= iv[nz]
        cc[nz, dst] += iv[nz]
        cc[src, src] += -o[src] - iv[src] + s
        cc[src, dst] += -o[dst] + iv[src] - s
        cc[dst, src] += o[src] - s - iv[dst]
        cc[dst, dst] += o[dst] + iv[dst] + s
        self.cl[src] -= to
        self.cl[dst] += to
        self.cr[src] -= ti
        self.cr[dst] += ti
        self.leaf_of[w] = dst

    def node_entropy(self, node: _Node) -> float:
        """Total nats lost by collapsing the node's words into one class."""
        if node.entropy is None:
            counts = self.nr_word[node.members]
            node.entropy = float(_xlogx_s(counts.sum()) - _xlogx(counts).sum())
        return node.entropy

    def split(self, node: _Node, trace=None) -> tuple[_Node, _Node]:
        """Binary-split a leaf node, refining by exchange passes."""
        src = node.slot
        dst = self.next_slot
        self.next_slot += 1
        order = sorted(node.members, key=lambda w: (-self.nr_word[w], w))
        for w in order[1::2]:
            # seeding moves may lower the objective; only exchange moves
            # below are required to improve it
            delta, aux = self.move_delta(w, dst)
            self.apply_move(w, dst, aux)
            self.objective += delta
        side_size = {src: len(order[0::2]), dst: len(order[1::2])}
        for _ in range(MAX_EXCHANGE_PASSES):
            moved = False
            for w in order:
                here = int(self.leaf_of[w])
                if side_size[here] <= 1:
                    continue
                other = dst if here == src else src
                delta, aux = self.move_delta(w, other)
                if delta > _MOVE_EPS:
                    self.apply_move(w, other, aux)
                    self.objective += delta
                    side_size[here] -= 1
                    side_size[other] += 1
                    moved = True
                    if trace is not None:
                        trace.append(self.objective)
            if not moved:
                break
        left = _Node(src, [w for w in node.members if self.leaf_of[w] == src])
        right = _Node(dst, [w for w in node.members if self.leaf_of[w] == dst])
        node.children = (left, right)
        node.members = None
        return left, right


def build_hierarchy(events: Events, vocab: Vocabulary, level_sizes,
                    seed: int = 0, trace=None) -> ClassHierarchy:
    """Build nested word classes with the given per-level class counts.

    ``level_sizes`` must be strictly increasing; the word level itself is
    implicit and not stored.  The procedure is deterministic; ``seed`` is
    accepted for interface stability but the splitting order does not
    depend on it.
    """
    del seed
    level_sizes = [int(s) for s in level_sizes]
    num_words = len(vocab)
    if not level_sizes:
        raise ClassingError("level_sizes must be non-empty")
    if any(s < 1 for s in level_sizes):
        raise ClassingError("class counts must be >= 1")
    if any(b <= a for a, b in zip(level_sizes, level_sizes[1:])):
        raise ClassingError("level_sizes must be strictly increasing")
    if level_sizes[-1] > num_words:
        raise ClassingError(
            f"cannot build {level_sizes[-1]} classes over {num_words} words"
        )
    if len(events) == 0:
        raise ClassingError("no training events")

    splitter = _Splitter(events, num_words, max_slots=level_sizes[-1])
    root = _Node(0, list(range(num_words)))
    leaves = [root]
    snapshots = []
    for size in level_sizes:
        while len(leaves) < size:
            candidates = [n for n in leaves if len(n.members) >= 2]
            best = max(
                candidates,
                key=lambda n: (splitter.node_entropy(n), len(n.members), -n.slot),
            )
            left, right = splitter.split(best, trace=trace)
            pos = leaves.index(best)
            leaves[pos] = left
            leaves.append(right)
        snapshots.append(list(leaves))

    # Depth-first order over the split tree gives each level dense ids and
    # keeps every class's descendants contiguous.
    paths = np.zeros((num_words, len(level_sizes)), dtype=np.int32)
    counters = [0] * len(level_sizes)
    marks = [{id(n) for n in snap} for snap in snapshots]

    def assign(node, prefix):
        prefix = list(prefix)
        for k in range(len(level_sizes)):
            if len(prefix) == k and id(node) in marks[k]:
                prefix.append(counters[k])
                counters[k] += 1
        if node.children is None:
            for w in node.members:
                paths[w, : len(prefix)] = prefix
        else:
            assign(node.children[0], prefix)
            assign(node.children[1], prefix)

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * level_sizes[-1] + 100))
    try:
        assign(root, [])
    finally:
        sys.setrecursionlimit(old_limit)

    hierarchy = ClassHierarchy(paths, tuple(level_sizes))
    hierarchy.validate()
    return hierarchy


def induce_classes(events: Events, vocab: Vocabulary, num_classes: int,
                   seed: int = 0, trace=None) -> ClassHierarchy:
    """Partition the vocabulary into ``num_classes`` classes (one level)."""
    if num_classes > len(vocab):
        raise ClassingError(
            f"num_classes {num_classes} exceeds vocabulary size {len(vocab)}"
        )
    return build_hierarchy(events, vocab, [num_classes], seed=seed, trace=trace)


def sweep_class_count(events: Events, vocab: Vocabulary, candidates,
                      indicator: np.ndarray | None = None, threshold: int = 3,
                      seed: int = 0, builder=None, table=None) -> int:
    """Pick the class count whose factored training iteration is cheapest.

    For each candidate count, classes are built from scratch, the
    two-model factored problem is assembled and a single iteration is
    run; the winner minimizes the measured candidate evaluations per
    event.  Ties go to the smallest candidate.  ``table``, if given,
    collects (candidate, ops_per_event) rows.
    """
    from .factored import train_factored

    if not candidates:
        raise ClassingError("no candidate class counts")
    if builder is None:
        builder = lambda ev, vo, c, s: build_hierarchy(ev, vo, [c], seed=s)
    if indicator is None:
        indicator = np.zeros(len(vocab), dtype=np.int32)
    best = None
    best_ops = None
    for cand in sorted(int(c) for c in candidates):
        hierarchy = builder(events, vocab, cand, seed)
        _, logs = train_factored(
            events,
            hierarchy,
            indicator=indicator,
            threshold=threshold,
            iterations=1,
            tolerance=0.0,
        )
        total_ops = sum(level_log[0].op_count for level_log in logs)
        if table is not None:
            table.append((cand, total_ops / len(events)))
        if best_ops is None or total_ops < best_ops:
            best, best_ops = cand, total_ops
    return best
