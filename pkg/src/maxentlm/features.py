"""Indicator feature templates over (history, candidate) pairs.

Eight binary templates are instantiated from training events.  Each
conditions on the candidate (slot W) and on zero, one or two history
positions, where a history position enters either as the word itself or
as its indicator class:

    unigram                   w = W
    class-bigram              w = W and iclass(w_{i-1}) = Z
    class-skip-bigram         w = W and iclass(w_{i-2}) = Z
    bigram                    w = W and w_{i-1} = Z
    skip-bigram               w = W and w_{i-2} = Z
    class-trigram             w = W and iclass(w_{i-1}) = Z and iclass(w_{i-2}) = Y
    class-bigram-skip-bigram  w = W and iclass(w_{i-1}) = Z and w_{i-2} = Y
    bigram-class-skip-bigram  w = W and w_{i-1} = Z and iclass(w_{i-2}) = Y

For a fixed (history, candidate) pair at most one feature of each
template fires, so at most eight fire in total.  A template/argument
combination is kept only when its count-weighted matches in the training
events reach the threshold (default 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Events

DEFAULT_THRESHOLD = 3

# (name, slot-1 source, slot-2 source); sources: hw=history word,
# hc=history indicator class, positions 1 = w_{i-1}, 2 = w_{i-2}
TEMPLATES = (
    ("unigram", None, None),
    ("class-bigram", ("hc", 1), None),
    ("class-skip-bigram", ("hc", 2), None),
    ("bigram", ("hw", 1), None),
    ("skip-bigram", ("hw", 2), None),
    ("class-trigram", ("hc", 1), ("hc", 2)),
    ("class-bigram-skip-bigram", ("hc", 1), ("hw", 2)),
    ("bigram-class-skip-bigram", ("hw", 1), ("hc", 2)),
)
KIND_NAMES = tuple(t[0] for t in TEMPLATES)
KIND_INDEX = {name: i for i, name in enumerate(KIND_NAMES)}


@dataclass(frozen=True)
class FeatureTemplate:
    kind: str

    @property
    def slots(self) -> tuple:
        spec = TEMPLATES[KIND_INDEX[self.kind]]
        return tuple(s for s in spec[1:] if s is not None)


@dataclass(frozen=True)
class Feature:
    """One instantiated indicator: fires iff all bound arguments match."""

    id: int
    kind: str
    args: tuple[int, ...]  # (W,) or (W, Z) or (W, Z, Y)
    train_count: int


class _KindIndex:
    """Per-template lookup from history key to the firing (W, id) arrays."""

    __slots__ = ("by_key",)

    def __init__(self, hist_keys, targets, fids):
        self.by_key: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if len(targets) == 0:
            return
        order = np.lexsort((targets, hist_keys))
        hk = hist_keys[order]
        tg = targets[order]
        fi = fids[order]
        bounds = np.flatnonzero(np.diff(hk)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [len(hk)]))
        for a, b in zip(starts, ends):
            self.by_key[int(hk[a])] = (tg[a:b], fi[a:b])

    def get(self, key: int):
        return self.by_key.get(key)


class FeatureSet:
    """Immutable inventory of instantiated features with firing indexes.

    Targets live in a dense id space of size ``num_targets`` (word ids
    for a word model, class ids for a class model).  Histories are always
    pairs of word ids; ``indicator`` maps a history word to the class id
    used by the class-conditioned templates.
    """

    def __init__(self, indicator: np.ndarray, num_targets: int,
                 kind_args: list[tuple[np.ndarray, ...]],
                 kind_counts: list[np.ndarray]):
        self.indicator = np.asarray(indicator, dtype=np.int32)
        self.num_indicator_classes = int(self.indicator.max()) + 1
        self.num_targets = int(num_targets)
        self._args = kind_args          # per kind: (W,) / (W, A1) / (W, A1, A2)
        self._counts = kind_counts      # per kind: int64 counts
        sizes = [len(c) for c in kind_counts]
        self.kind_offsets = np.concatenate(([0], np.cumsum(sizes))).astype(int)
        self.num_features = int(self.kind_offsets[-1])
        self._indexes = []
        for k, args in enumerate(kind_args):
            fids = np.arange(self.kind_offsets[k], self.kind_offsets[k + 1],
                             dtype=np.int64)
            if TEMPLATES[k][1] is None:
                hist = np.zeros(len(fids), dtype=np.int64)
            elif TEMPLATES[k][2] is None:
                hist = args[1].astype(np.int64)
            else:
                hist = args[1].astype(np.int64) * self._radix(k, 2) + args[2]
            self._indexes.append(_KindIndex(hist, args[0].astype(np.int64), fids))

    def _radix(self, kind: int, slot: int) -> int:
        src = TEMPLATES[kind][slot]
        return (self.num_indicator_classes if src[0] == "hc"
                else len(self.indicator))

    def event_key(self, kind: int, h2: int, h1: int) -> int:
        """History key of a template for one event (0 for unigram)."""
        spec = TEMPLATES[kind]
        if spec[1] is None:
            return 0
        vals = []
        for src in (spec[1], spec[2]):
            if src is None:
                continue
            word = h1 if src[1] == 1 else h2
            vals.append(int(self.indicator[word]) if src[0] == "hc" else int(word))
        if len(vals) == 1:
            return vals[0]
        return vals[0] * self._radix(kind, 2) + vals[1]

    def event_keys(self, h2: np.ndarray, h1: np.ndarray) -> list[np.ndarray]:
        """Vectorized ``event_key`` over event arrays, one array per kind."""
        ic1 = self.indicator[h1].astype(np.int64)
        ic2 = self.indicator[h2].astype(np.int64)
        w1 = h1.astype(np.int64)
        w2 = h2.astype(np.int64)
        zero = np.zeros(len(h1), dtype=np.int64)
        nic = self.num_indicator_classes
        nw = len(self.indicator)
        return [
            zero,
            ic1,
            ic2,
            w1,
            w2,
            ic1 * nic + ic2,
            ic1 * nw + w2,
            w1 * nic + ic2,
        ]

    def kind_lookup(self, kind: int, key: int):
        """Firing (targets, feature ids) for a template and history key."""
        return self._indexes[kind].get(key)

    def feature(self, fid: int) -> Feature:
        kind = int(np.searchsorted(self.kind_offsets, fid, side="right")) - 1
        local = fid - self.kind_offsets[kind]
        args = tuple(int(a[local]) for a in self._args[kind])
        return Feature(fid, KIND_NAMES[kind], args, int(self._counts[kind][local]))

    def __len__(self) -> int:
        return self.num_features

    def __iter__(self):
        for fid in range(self.num_features):
            yield self.feature(fid)

    def train_counts(self) -> np.ndarray:
        if self.num_features == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self._counts)

    def active_features(self, history: tuple[int, int], candidate: int) -> list[int]:
        """Ids of every feature firing on (history, candidate); at most 8."""
        h2, h1 = history
        out = []
        for kind in range(len(TEMPLATES)):
            entry = self._indexes[kind].get(self.event_key(kind, h2, h1))
            if entry is None:
                continue
            targets, fids = entry
            pos = np.searchsorted(targets, candidate)
            if pos < len(targets) and targets[pos] == candidate:
                out.append(int(fids[pos]))
        return out

    def dump(self, path) -> None:
        """Debug listing: ``id<TAB>kind<TAB>args...<TAB>count`` per line."""
        with open(path, "w", encoding="utf-8") as fh:
            for feat in self:
                args = "\t".join(str(a) for a in feat.args)
                fh.write(f"{feat.id}\t{feat.kind}\t{args}\t{feat.train_count}\n")


def instantiate(events: Events, indicator: np.ndarray,
                threshold: int = DEFAULT_THRESHOLD,
                num_targets: int | None = None) -> FeatureSet:
    """Instantiate every template/argument pair matched by >= threshold cases.

    Matching is count-weighted: an event with multiplicity c contributes
    c cases.  Ids are assigned in template order, then by (W, Z, Y).
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    indicator = np.asarray(indicator, dtype=np.int32)
    if num_targets is None:
        num_targets = int(events.target.max()) + 1 if len(events) else 0
    nic = int(indicator.max()) + 1
    nw = len(indicator)
    t = events.target.astype(np.int64)
    cnt = events.count
    ic1 = indicator[events.h1].astype(np.int64)
    ic2 = indicator[events.h2].astype(np.int64)
    w1 = events.h1.astype(np.int64)
    w2 = events.h2.astype(np.int64)
    slot_values = [
        (),
        (ic1,),
        (ic2,),
        (w1,),
        (w2,),
        (ic1, ic2),
        (ic1, w2),
        (w1, ic2),
    ]
    slot_radix = [
        (),
        (nic,),
        (nic,),
        (nw,),
        (nw,),
        (nic, nic),
        (nic, nw),
        (nw, nic),
    ]
    kind_args: list[tuple[np.ndarray, ...]] = []
    kind_counts: list[np.ndarray] = []
    for kind in range(len(TEMPLATES)):
        key = t.copy()
        for vals, radix in zip(slot_values[kind], slot_radix[kind]):
            key = key * radix + vals
        uniq, inverse = np.unique(key, return_inverse=True)
        counts = np.bincount(inverse, weights=cnt,
                             minlength=len(uniq)).astype(np.int64)
        keep = counts >= threshold
        uniq = uniq[keep]
        counts = counts[keep]
        cols = []
        rest = uniq
        for radix in reversed(slot_radix[kind]):
            cols.append(rest % radix)
            rest = rest // radix
        cols.append(rest)
        cols.reverse()  # now (W, A1[, A2])
        kind_args.append(tuple(c.astype(np.int64) for c in cols))
        kind_counts.append(counts)
    return FeatureSet(indicator, num_targets, kind_args, kind_counts)


def restrict_to_class(feature_set: FeatureSet, class_members):
    """Iterate the candidate ids of one class, for the factored inner loop."""
    members = list(class_members)
    if not members:
        raise ValueError("class has no members")
    del feature_set  # the candidate list is independent of the inventory
    yield from members
