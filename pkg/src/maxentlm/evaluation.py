"""Perplexity evaluation and smoothing against a count-based trigram model.

The trigram model interpolates relative frequencies recursively: the
unigram estimate is mixed with a uniform floor, the bigram estimate with
the unigram level, and the trigram estimate with the bigram level, each
with a single weight.  When a context was never seen, its level passes
through to the next lower one, so every conditional distribution sums to
one and every word keeps positive probability.  Weights are estimated by
expectation-maximization, level by level, on a held-out tenth of the
events.

A maximum entropy model is combined with the trigram model by a single
linear interpolation weight, likewise fit on held-out text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import START, Events, TokenStream

_EM_ITERATIONS = 200
_EM_TOL = 1e-10


class EvalError(Exception):
    """Evaluation impossible: bad split, zero probability, etc."""


def _group_by_context(keys: np.ndarray, targets: np.ndarray,
                      counts: np.ndarray) -> dict:
    """Map context key -> (target ids, counts, total)."""
    out: dict[int, tuple[np.ndarray, np.ndarray, float]] = {}
    if len(keys) == 0:
        return out
    order = np.lexsort((targets, keys))
    k = keys[order]
    t = targets[order]
    c = counts[order]
    bounds = np.flatnonzero(np.diff(k)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [len(k)]))
    for a, b in zip(starts, ends):
        tt = t[a:b]
        uniq, inverse = np.unique(tt, return_inverse=True)
        cc = np.bincount(inverse, weights=c[a:b], minlength=len(uniq))
        out[int(k[a])] = (uniq, cc, float(cc.sum()))
    return out


class TrigramLM:
    """Interpolated count trigram model over the full vocabulary."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.n_tokens = 0.0
        self.unigram = np.zeros(vocab_size)
        self.bigram: dict = {}
        self.trigram: dict = {}
        self.weights = (0.5, 0.5, 0.5)  # unigram, bigram, trigram levels

    def _count(self, events: Events) -> None:
        v = self.vocab_size
        self.unigram = np.bincount(events.target, weights=events.count,
                                   minlength=v)
        self.n_tokens = float(events.count.sum())
        h1 = events.h1.astype(np.int64)
        h2 = events.h2.astype(np.int64)
        self.bigram = _group_by_context(h1, events.target.astype(np.int64),
                                        events.count.astype(np.float64))
        self.trigram = _group_by_context(h2 * v + h1,
                                         events.target.astype(np.int64),
                                         events.count.astype(np.float64))

    def _p1(self, w: int) -> float:
        l1 = self.weights[0]
        return l1 * self.unigram[w] / self.n_tokens + (1.0 - l1) / self.vocab_size

    def _p2(self, h1: int, w: int) -> float:
        ctx = self.bigram.get(int(h1))
        if ctx is None:
            return self._p1(w)
        l2 = self.weights[1]
        targets, counts, total = ctx
        pos = int(np.searchsorted(targets, w))
        f2 = counts[pos] / total if pos < len(targets) and targets[pos] == w \
            else 0.0
        return l2 * f2 + (1.0 - l2) * self._p1(w)

    def prob(self, history: tuple[int, int], w: int) -> float:
        h2, h1 = history
        ctx = self.trigram.get(int(h2) * self.vocab_size + int(h1))
        if ctx is None:
            return self._p2(h1, w)
        l3 = self.weights[2]
        targets, counts, total = ctx
        pos = int(np.searchsorted(targets, w))
        f3 = counts[pos] / total if pos < len(targets) and targets[pos] == w \
            else 0.0
        return l3 * f3 + (1.0 - l3) * self._p2(h1, w)

    def log_prob(self, history: tuple[int, int], w: int) -> float:
        return math.log(self.prob(history, w))

    def distribution(self, history: tuple[int, int]) -> np.ndarray:
        h2, h1 = history
        l1, l2, l3 = self.weights
        p = np.full(self.vocab_size, (1.0 - l1) / self.vocab_size)
        p += l1 * self.unigram / self.n_tokens
        ctx2 = self.bigram.get(int(h1))
        if ctx2 is not None:
            targets, counts, total = ctx2
            p *= 1.0 - l2
            p[targets] += l2 * counts / total
        ctx3 = self.trigram.get(int(h2) * self.vocab_size + int(h1))
        if ctx3 is not None:
            targets, counts, total = ctx3
            p *= 1.0 - l3
            p[targets] += l3 * counts / total
        return p


def _em_weight(numerators: np.ndarray, backoffs: np.ndarray,
               counts: np.ndarray, init: float = 0.5) -> float:
    """Fit one mixing weight: max_l sum count*ln(l*num + (1-l)*backoff)."""
    if len(numerators) == 0:
        return 0.0
    lam = init
    total = counts.sum()
    for _ in range(_EM_ITERATIONS):
        mixed = lam * numerators + (1.0 - lam) * backoffs
        resp = np.where(mixed > 0, lam * numerators / np.where(mixed > 0,
                                                               mixed, 1.0), 0.0)
        new = float((counts * resp).sum() / total)
        if abs(new - lam) < _EM_TOL:
            lam = new
            break
        lam = new
    return min(max(lam, 0.0), 1.0)


def train_trigram(events: Events, vocab_size: int) -> TrigramLM:
    """Count model with held-out interpolation weights.

    Every tenth event (by merged-event index) is held out for weight
    estimation; final counts come from all events.
    """
    # every tenth token position (by cumulative count) is held out, so
    # heavily merged event lists still split by mass
    ends = np.cumsum(events.count)
    starts = ends - events.count
    held_counts = ends // 10 - starts // 10
    train_counts = events.count - held_counts
    if held_counts.sum() == 0 or train_counts.sum() == 0:
        raise EvalError(
            f"corpus too small to split for weight estimation "
            f"({events.total_count()} token positions)"
        )

    def subset(counts):
        mask = counts > 0
        return Events(events.h2[mask], events.h1[mask], events.target[mask],
                      counts[mask])

    train_part = subset(train_counts)
    held = subset(held_counts)
    model = TrigramLM(vocab_size)
    model._count(train_part)

    uniform = 1.0 / vocab_size
    h_h2 = held.h2.astype(np.int64)
    h_h1 = held.h1.astype(np.int64)
    h_t = held.target
    h_c = held.count.astype(np.float64)

    # level 1: unigram against the uniform floor
    f1 = model.unigram[h_t] / model.n_tokens
    l1 = _em_weight(f1, np.full(len(h_t), uniform), h_c)
    model.weights = (l1, 0.0, 0.0)

    # level 2: bigram against the fitted unigram mixture, where the
    # bigram context was seen
    f2 = np.zeros(len(h_t))
    seen2 = np.zeros(len(h_t), dtype=bool)
    p1 = np.array([model._p1(int(w)) for w in h_t])
    for i in range(len(h_t)):
        ctx = model.bigram.get(int(h_h1[i]))
        if ctx is None:
            continue
        seen2[i] = True
        targets, counts, total = ctx
        pos = int(np.searchsorted(targets, h_t[i]))
        if pos < len(targets) and targets[pos] == h_t[i]:
            f2[i] = counts[pos] / total
    l2 = _em_weight(f2[seen2], p1[seen2], h_c[seen2])
    model.weights = (l1, l2, 0.0)

    # level 3: trigram against the fitted bigram mixture
    f3 = np.zeros(len(h_t))
    seen3 = np.zeros(len(h_t), dtype=bool)
    p2 = np.array([model._p2(int(h_h1[i]), int(h_t[i]))
                   for i in range(len(h_t))])
    for i in range(len(h_t)):
        ctx = model.trigram.get(int(h_h2[i]) * vocab_size + int(h_h1[i]))
        if ctx is None:
            continue
        seen3[i] = True
        targets, counts, total = ctx
        pos = int(np.searchsorted(targets, h_t[i]))
        if pos < len(targets) and targets[pos] == h_t[i]:
            f3[i] = counts[pos] / total
    l3 = _em_weight(f3[seen3], p2[seen3], h_c[seen3])
    model.weights = (l1, l2, l3)

    # final counts over everything, weights kept from the held-out fit
    model._count(events)
    return model


def perplexity(model, test: TokenStream, token_log: list | None = None) -> float:
    """exp of the mean negative log-probability per token position.

    Only word positions are scored; sentence ends are not predicted.
    ``token_log`` collects (position, word_id, logprob) rows when given.
    """
    total = 0.0
    n = 0
    position = 0
    for sent in test.sentences:
        h2, h1 = START, START
        for w in sent:
            w = int(w)
            lp = model.log_prob((h2, h1), w)
            if not math.isfinite(lp):
                raise EvalError(
                    f"zero or invalid probability at token position {position}"
                )
            total += lp
            if token_log is not None:
                token_log.append((position, w, lp))
            n += 1
            position += 1
            h2, h1 = h1, w
    if n == 0:
        raise EvalError("empty test stream")
    return math.exp(-total / n)


def interpolate(maxent_prob: float, trigram_prob: float, alpha: float) -> float:
    """Convex combination of two probabilities."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be within [0, 1]")
    return alpha * maxent_prob + (1.0 - alpha) * trigram_prob


@dataclass
class InterpolatedModel:
    """Maxent model mixed with a trigram model at a fixed weight."""

    maxent: object
    trigram: TrigramLM
    alpha: float

    def prob(self, history: tuple[int, int], w: int) -> float:
        return interpolate(
            math.exp(self.maxent.log_prob(history, w)),
            self.trigram.prob(history, w),
            self.alpha,
        )

    def log_prob(self, history: tuple[int, int], w: int) -> float:
        return math.log(self.prob(history, w))


def fit_alpha(maxent, trigram: TrigramLM, heldout: TokenStream) -> float:
    """Interpolation weight maximizing held-out log-likelihood.

    Runs EM from 0.5 and falls back to a 0.05-step grid if the grid beats
    the EM answer (EM cannot reach the endpoints exactly).
    """
    pm = []
    pt = []
    for sent in heldout.sentences:
        h2, h1 = START, START
        for w in sent:
            w = int(w)
            pm.append(math.exp(maxent.log_prob((h2, h1), w)))
            pt.append(trigram.prob((h2, h1), w))
            h2, h1 = h1, w
    if not pm:
        raise EvalError("empty held-out stream")
    pm = np.asarray(pm)
    pt = np.asarray(pt)

    def loglike(alpha):
        mixed = alpha * pm + (1.0 - alpha) * pt
        if np.any(mixed <= 0):
            return -np.inf
        return float(np.log(mixed).sum())

    alpha = _em_weight(pm, pt, np.ones(len(pm)))
    best_ll = loglike(alpha)
    for grid in np.arange(0.0, 1.0001, 0.05):
        ll = loglike(float(grid))
        if ll > best_ll + 1e-9:
            alpha, best_ll = float(grid), ll
    if not math.isfinite(best_ll):
        raise EvalError("interpolation weight fit failed")
    return alpha
