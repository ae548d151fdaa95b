"""Class-factored model: predict the class chain, then the word in it.

The word distribution is decomposed into a product of per-level
conditionals: the top level predicts a class over all top-level classes,
each middle level predicts a class among the children of the previous
level's pick, and the last level predicts the word among its class
members.  Every level is an independent maximum entropy model, and each
level's candidate space is just that sibling set, which is what makes
the training inner loop cheap: words outside the target's class are
never scored, their probability being zero by construction.

Internally each level's targets are relabeled so that siblings occupy a
contiguous id range; model files store original ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classing import ClassHierarchy
from .corpus import Events, Vocabulary
from .features import FeatureSet, instantiate
from .gis import (
    CandidateSpace,
    IterationStats,
    MaxEntModel,
    build_model,
    load_model,
    save_model,
    train,
)

MANIFEST_NAME = "manifest.json"


class FactoredError(Exception):
    """Inconsistent hierarchy/event/model combination."""


@dataclass(frozen=True)
class LevelSpec:
    """Target relabeling and candidate space for one level.

    ``encode`` maps an original id (class id at this level, or word id at
    the last level) to the internal target id; ``decode`` is its inverse.
    """

    encode: np.ndarray
    decode: np.ndarray
    space: CandidateSpace


def level_specs(hierarchy: ClassHierarchy | None, vocab_size: int) -> list[LevelSpec]:
    """Candidate spaces for every level, the word level last.

    With no hierarchy the result is a single full word space (the
    unfactored layout).
    """
    identity = np.arange(vocab_size, dtype=np.int64)
    if hierarchy is None:
        return [LevelSpec(identity, identity,
                          CandidateSpace.full("words", vocab_size))]
    if hierarchy.num_words != vocab_size:
        raise FactoredError(
            f"hierarchy covers {hierarchy.num_words} words, vocabulary has "
            f"{vocab_size}"
        )
    specs: list[LevelSpec] = []
    prev_encode = None
    for level in range(hierarchy.levels):
        size = hierarchy.sizes[level]
        ids = np.arange(size, dtype=np.int64)
        if level == 0:
            specs.append(LevelSpec(ids, ids, CandidateSpace.full("classes", size)))
            prev_encode = ids
            continue
        # parent (previous-level) class of each class at this level
        parent = np.zeros(size, dtype=np.int64)
        parent[hierarchy.paths[:, level]] = hierarchy.paths[:, level - 1]
        parent_enc = prev_encode[parent]
        decode = np.lexsort((ids, parent_enc))
        encode = np.empty(size, dtype=np.int64)
        encode[decode] = ids
        space = CandidateSpace.grouped("classes", parent_enc[decode])
        specs.append(LevelSpec(encode, decode, space))
        prev_encode = encode
    # word level, grouped by the finest class
    finest = prev_encode[hierarchy.paths[:, -1]]
    decode = np.lexsort((identity, finest))
    encode = np.empty(vocab_size, dtype=np.int64)
    encode[decode] = identity
    space = CandidateSpace.grouped("class-members", finest[decode])
    specs.append(LevelSpec(encode, decode, space))
    return specs


def factor_events(events: Events, hierarchy: ClassHierarchy,
                  vocab_size: int | None = None) -> list[Events]:
    """Relabel event targets per level; counts are preserved at each level.

    Training each level is completely separate, so the per-level event
    sets are independent objects; duplicates created by coarsening are
    merged with summed counts.
    """
    if vocab_size is None:
        vocab_size = hierarchy.num_words
    if len(events) and int(events.target.max()) >= hierarchy.num_words:
        raise FactoredError("event target outside the hierarchy")
    specs = level_specs(hierarchy, vocab_size)
    out = []
    for level, spec in enumerate(specs):
        if level < hierarchy.levels:
            orig = hierarchy.paths[events.target, level]
        else:
            orig = events.target
        targets = spec.encode[orig]
        radix = max(vocab_size, spec.space.size)
        out.append(Events(events.h2, events.h1, targets,
                          events.count).merged(radix))
    return out


@dataclass
class FactoredModel:
    """Ordered per-level models whose conditionals multiply to P(word|h)."""

    hierarchy: ClassHierarchy
    specs: list[LevelSpec]
    models: list[MaxEntModel]

    @property
    def vocab_size(self) -> int:
        return self.hierarchy.num_words

    def _level_target(self, level: int, word: int) -> int:
        if level < self.hierarchy.levels:
            return int(self.specs[level].encode[self.hierarchy.paths[word, level]])
        return int(self.specs[level].encode[word])

    def log_probability(self, history: tuple[int, int], word: int) -> float:
        total = 0.0
        for level, model in enumerate(self.models):
            total += model.log_prob(history, self._level_target(level, word))
        return total

    def probability(self, history: tuple[int, int], word: int) -> float:
        return float(np.exp(self.log_probability(history, word)))

    # eval-facing alias shared with the unfactored model type
    def log_prob(self, history: tuple[int, int], word: int) -> float:
        return self.log_probability(history, word)

    def distribution(self, history: tuple[int, int]) -> np.ndarray:
        """P(w|history) for every word id; the levels telescope."""
        log_total = np.zeros(self.vocab_size)
        for level, model in enumerate(self.models):
            space = model.space
            level_logp = np.empty(space.size)
            for g in range(space.num_groups):
                lo = int(space.group_lo[g])
                hi = int(space.group_hi[g])
                s = model._score_log_vector(history, lo, hi)
                m = s.max()
                z = np.exp(s - m).sum()
                level_logp[lo:hi] = s - m - np.log(z)
            if level < self.hierarchy.levels:
                orig = self.hierarchy.paths[:, level]
            else:
                orig = np.arange(self.vocab_size)
            log_total += level_logp[self.specs[level].encode[orig]]
        return np.exp(log_total)


def train_factored(events: Events, hierarchy: ClassHierarchy,
                   indicator: np.ndarray, threshold: int = 3,
                   iterations: int = 100, tolerance: float = 1e-4,
                   vocab_size: int | None = None):
    """Train every level independently; returns the model and per-level logs."""
    if vocab_size is None:
        vocab_size = hierarchy.num_words
    specs = level_specs(hierarchy, vocab_size)
    level_events = factor_events(events, hierarchy, vocab_size)
    models = []
    logs: list[list[IterationStats]] = []
    for spec, ev in zip(specs, level_events):
        fset = instantiate(ev, indicator, threshold=threshold,
                           num_targets=spec.space.size)
        model = build_model(fset, spec.space, ev)
        model, log = train(model, ev, iterations=iterations,
                           tolerance=tolerance)
        models.append(model)
        logs.append(log)
    return FactoredModel(hierarchy, specs, models), logs


def save_model_dir(path, vocab: Vocabulary, indicator: np.ndarray,
                   model, method: str) -> None:
    """Write a model directory: manifest, vocab, maps and level files."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    vocab.save(path / "vocab.txt")
    with (path / "indicator.map").open("w", encoding="utf-8") as fh:
        for w in range(len(vocab)):
            fh.write(f"{vocab[w]}\t{int(indicator[w])}\n")
    manifest = {"method": method, "vocab": "vocab.txt",
                "indicator": "indicator.map"}
    if isinstance(model, FactoredModel):
        model.hierarchy.save(path / "hierarchy.map", vocab)
        manifest["hierarchy"] = "hierarchy.map"
        names = []
        for level, (spec, m) in enumerate(zip(model.specs, model.models)):
            name = f"level{level}.model"
            save_model(m, path / name, target_decode=spec.decode)
            names.append(name)
        manifest["levels"] = names
    else:
        save_model(model, path / "level0.model")
        manifest["levels"] = ["level0.model"]
    with (path / MANIFEST_NAME).open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_model_dir(path):
    """Load a model directory; returns (model, vocab, indicator)."""
    path = Path(path)
    with (path / MANIFEST_NAME).open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    vocab = Vocabulary.load(path / manifest["vocab"])
    indicator = np.zeros(len(vocab), dtype=np.int32)
    with (path / manifest["indicator"]).open(encoding="utf-8") as fh:
        for line in fh:
            word, cid = line.rstrip("\n").split("\t")
            indicator[vocab.index[word]] = int(cid)
    if "hierarchy" in manifest:
        hierarchy = ClassHierarchy.load(path / manifest["hierarchy"], vocab)
        specs = level_specs(hierarchy, len(vocab))
        models = []
        for level, name in enumerate(manifest["levels"]):
            spec = specs[level]
            encode = spec.encode
            models.append(load_model(path / name, indicator, spec.space.size,
                                     spec.space, target_encode=encode))
        model = FactoredModel(hierarchy, specs, models)
    else:
        space = CandidateSpace.full("words", len(vocab))
        model = load_model(path / manifest["levels"][0], indicator,
                           len(vocab), space)
    return model, vocab, indicator
