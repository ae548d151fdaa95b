"""Iterative scaling for conditional maximum entropy models.

The trainer alternates an expectation pass with a multiplicative weight
update.  The expectation pass walks every training event, scores every
candidate in the event's candidate space, normalizes, and accumulates
per-feature model expectations; the update moves each log-weight by
ln(empirical/expected)/C, where C is the uniform feature-sum constant.

A slack feature pads the binary feature sum of every (event, candidate)
pair up to exactly C, as the update rule requires.  C is taken as the
maximum firing-feature total over all training events and all candidates
in their spaces, so the slack value is never negative.

The unigram-cached trainer is an exact algebraic rearrangement of the
same pass: candidate scores that differ from a per-iteration unigram
table are corrected individually, and the rest enter the normalizer
through one precomputed bulk sum, so the inner loop touches only
candidates with a firing non-unigram feature.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Events
from .features import KIND_INDEX, KIND_NAMES, TEMPLATES, FeatureSet

DEFAULT_ITERATIONS = 100
DEFAULT_TOLERANCE = 1e-4
_FLUSH_EVERY = 512  # events per expectation-buffer flush; fixed for determinism
_LOG_OVERFLOW = 690.0  # ln(1e300), guard for exponentiation


class GisError(Exception):
    """Training-time invariant violation."""


class ScoreOverflowError(GisError):
    """Unnormalized score too large to exponentiate."""


@dataclass(frozen=True)
class CandidateSpace:
    """Candidate ids a model normalizes over.

    Targets occupy a dense id space.  ``group_of`` assigns each target a
    group whose members are contiguous in id order; each event's
    candidates are the members of its target's group.  Full spaces (all
    words, or all top-level classes) have a single group.
    """

    kind: str  # words | classes | class-members
    size: int
    group_lo: np.ndarray
    group_hi: np.ndarray
    group_of: np.ndarray | None = None

    @classmethod
    def full(cls, kind: str, size: int) -> "CandidateSpace":
        return cls(kind, size, np.array([0]), np.array([size]), None)

    @classmethod
    def grouped(cls, kind: str, group_of: np.ndarray) -> "CandidateSpace":
        group_of = np.asarray(group_of, dtype=np.int64)
        if len(group_of) and np.any(np.diff(group_of) < 0):
            raise GisError("group ids must be non-decreasing over target ids")
        num_groups = int(group_of.max()) + 1 if len(group_of) else 0
        lo = np.searchsorted(group_of, np.arange(num_groups))
        hi = np.searchsorted(group_of, np.arange(num_groups), side="right")
        if np.any(lo == hi):
            raise GisError("every candidate group must be non-empty")
        return cls(kind, len(group_of), lo, hi, group_of)

    @property
    def num_groups(self) -> int:
        return len(self.group_lo)

    def event_ranges(self, targets: np.ndarray):
        """Per-event candidate ranges [lo, hi) given event targets."""
        if self.group_of is None:
            n = len(targets)
            return np.zeros(n, dtype=np.int64), np.full(n, self.size, np.int64)
        groups = self.group_of[targets]
        return self.group_lo[groups], self.group_hi[groups]


@dataclass
class MaxEntModel:
    """Log-linear model: weights over a feature set plus a candidate space.

    ``lambdas`` has one entry per feature and a final slack entry.
    """

    feature_set: FeatureSet
    space: CandidateSpace
    lambdas: np.ndarray
    slack_c: int
    iterations_run: int = 0

    def unnormalized_score(self, history: tuple[int, int], candidate: int) -> float:
        """exp of the firing-weight sum, slack included."""
        firing = self.feature_set.active_features(history, candidate)
        log_score = float(self.lambdas[firing].sum())
        log_score += float(self.lambdas[-1]) * (self.slack_c - len(firing))
        if log_score > _LOG_OVERFLOW:
            raise ScoreOverflowError(
                f"log score {log_score:.3g} exceeds exp() range for "
                f"history={history} candidate={candidate}"
            )
        return math.exp(log_score)

    def _score_log_vector(self, history: tuple[int, int], lo: int, hi: int):
        h2, h1 = history
        fset = self.feature_set
        lam = self.lambdas
        slack = float(lam[-1])
        s = np.full(hi - lo, slack * self.slack_c)
        for kind in range(len(TEMPLATES)):
            entry = fset.kind_lookup(kind, fset.event_key(kind, h2, h1))
            if entry is None:
                continue
            targets, fids = entry
            a = int(np.searchsorted(targets, lo))
            b = int(np.searchsorted(targets, hi))
            if a < b:
                s[targets[a:b] - lo] += lam[fids[a:b]] - slack
        return s

    def normalizer(self, history: tuple[int, int], group: int = 0) -> float:
        """Sum of unnormalized scores over the (group's) candidate space."""
        lo = int(self.space.group_lo[group])
        hi = int(self.space.group_hi[group])
        s = self._score_log_vector(history, lo, hi)
        m = float(s.max())
        return float(np.exp(s - m).sum() * math.exp(m))

    def log_prob(self, history: tuple[int, int], candidate: int) -> float:
        if self.space.group_of is None:
            lo, hi = 0, self.space.size
        else:
            group = int(self.space.group_of[candidate])
            lo = int(self.space.group_lo[group])
            hi = int(self.space.group_hi[group])
        s = self._score_log_vector(history, lo, hi)
        m = float(s.max())
        z = float(np.exp(s - m).sum())
        return float(s[candidate - lo]) - m - math.log(z)

    def prob(self, history: tuple[int, int], candidate: int) -> float:
        return math.exp(self.log_prob(history, candidate))

    def distribution(self, history: tuple[int, int], group: int = 0) -> np.ndarray:
        """Normalized probabilities over one group's candidates."""
        lo = int(self.space.group_lo[group])
        hi = int(self.space.group_hi[group])
        s = self._score_log_vector(history, lo, hi)
        s -= s.max()
        p = np.exp(s)
        p /= p.sum()
        return p


@dataclass
class TrainerState:
    """One expectation pass worth of sufficient statistics."""

    empirical: np.ndarray  # count-weighted firing totals, slack last
    expected: np.ndarray   # model expectations, slack last
    iteration: int
    train_loglike: float
    op_counter: int

    def max_deviation(self) -> float:
        mask = self.empirical > 0
        ratio = self.empirical[mask] / self.expected[mask]
        return float(np.abs(ratio - 1.0).max()) if mask.any() else 0.0


@dataclass
class IterationStats:
    iteration: int
    loglike: float
    op_count: int
    max_dev: float
    seconds: float


class _BoundEvents:
    """Events resolved against one model's feature indexes and space."""

    def __init__(self, fset: FeatureSet, space: CandidateSpace, events: Events):
        self.count = events.count.astype(np.float64)
        self.total = float(events.count.sum())
        lo, hi = space.event_ranges(events.target)
        self.lo = lo
        self.hi = hi
        self.tloc = events.target.astype(np.int64) - lo
        keys = fset.event_keys(events.h2, events.h1)
        self.tables: list[list] = []
        self.entry_ids: list[np.ndarray] = []
        for kind in range(len(TEMPLATES)):
            index = fset._indexes[kind].by_key
            sorted_keys = np.fromiter(sorted(index), dtype=np.int64,
                                      count=len(index))
            table = [index[int(k)] for k in sorted_keys]
            pos = np.searchsorted(sorted_keys, keys[kind])
            pos_clip = np.minimum(pos, max(len(sorted_keys) - 1, 0))
            if len(sorted_keys):
                hit = sorted_keys[pos_clip] == keys[kind]
            else:
                hit = np.zeros(len(keys[kind]), dtype=bool)
            ids = np.where(hit, pos_clip, -1).astype(np.int64)
            self.tables.append(table)
            self.entry_ids.append(ids)
        self.max_width = int((hi - lo).max()) if len(events) else 0

    def __len__(self) -> int:
        return len(self.tloc)


def compute_slack_constant(fset: FeatureSet, space: CandidateSpace,
                           events: Events) -> int:
    """Max firing-feature total over all events and their candidates."""
    bound = _BoundEvents(fset, space, events)
    best = 0
    width = max(bound.max_width, 1)
    buf = np.zeros(width, dtype=np.int16)
    for i in range(len(bound)):
        lo, hi = int(bound.lo[i]), int(bound.hi[i])
        k = hi - lo
        nf = buf[:k]
        nf.fill(0)
        touched = False
        for kind in range(len(TEMPLATES)):
            eid = bound.entry_ids[kind][i]
            if eid < 0:
                continue
            targets, _ = bound.tables[kind][eid]
            a = int(np.searchsorted(targets, lo))
            b = int(np.searchsorted(targets, hi))
            if a < b:
                nf[targets[a:b] - lo] += 1
                touched = True
        if touched:
            best = max(best, int(nf.max()))
    return max(best, 1)


def build_model(fset: FeatureSet, space: CandidateSpace,
                events: Events) -> MaxEntModel:
    """Zero-initialized model with the slack constant fixed from events.

    The events given here must be the ones the model will be trained on:
    the empirical side of training is read off the feature counts, which
    were accumulated over the same events at instantiation time.
    """
    c = compute_slack_constant(fset, space, events)
    lam = np.zeros(fset.num_features + 1, dtype=np.float64)
    return MaxEntModel(fset, space, lam, c)


def _empirical_vector(model: MaxEntModel, total_count: float) -> np.ndarray:
    counts = model.feature_set.train_counts().astype(np.float64)
    slack = model.slack_c * total_count - counts.sum()
    return np.concatenate((counts, [slack]))


def _pass_plain(model: MaxEntModel, bound: _BoundEvents, iteration: int):
    fset = model.feature_set
    lam = model.lambdas
    slack = float(lam[-1])
    base = slack * model.slack_c
    adj = lam[:-1] - slack
    nfeat = fset.num_features
    expected = np.zeros(nfeat, dtype=np.float64)
    # full-space unigram block accumulates densely: its firing set is the
    # same for every event
    uni = None
    if model.space.group_of is None and bound.entry_ids[0].size:
        eid = bound.entry_ids[0][0] if len(bound) else -1
        if eid >= 0:
            uni_targets, uni_fids = bound.tables[0][eid]
            uni = (uni_targets, uni_fids, np.zeros(len(uni_fids)))
    buf = np.empty(max(bound.max_width, 1), dtype=np.float64)
    pend_fids: list[np.ndarray] = []
    pend_vals: list[np.ndarray] = []
    loglike = 0.0
    ops = 0
    kinds = range(1 if uni is not None else 0, len(TEMPLATES))
    for i in range(len(bound)):
        lo, hi = int(bound.lo[i]), int(bound.hi[i])
        k = hi - lo
        cnt = bound.count[i]
        s = buf[:k]
        s.fill(base)
        slices = []
        for kind in kinds:
            eid = bound.entry_ids[kind][i]
            if eid < 0:
                continue
            targets, fids = bound.tables[kind][eid]
            if model.space.group_of is not None:
                a = int(np.searchsorted(targets, lo))
                b = int(np.searchsorted(targets, hi))
                if a == b:
                    continue
                wloc = targets[a:b] - lo
                fslice = fids[a:b]
            else:
                wloc = targets
                fslice = fids
            s[wloc] += adj[fslice]
            slices.append((wloc, fslice))
        if uni is not None:
            s[uni[0]] += adj[uni[1]]
        m = float(s.max())
        p = np.exp(s - m)
        z = float(p.sum())
        loglike += cnt * (float(s[bound.tloc[i]]) - m - math.log(z))
        scale = cnt / z
        for wloc, fslice in slices:
            pend_fids.append(fslice)
            pend_vals.append(p[wloc] * scale)
        if uni is not None:
            uni[2][:] += p[uni[0]] * scale
        ops += k
        if (i + 1) % _FLUSH_EVERY == 0 and pend_fids:
            expected += np.bincount(
                np.concatenate(pend_fids),
                weights=np.concatenate(pend_vals),
                minlength=nfeat,
            )
            pend_fids.clear()
            pend_vals.clear()
    if pend_fids:
        expected += np.bincount(
            np.concatenate(pend_fids),
            weights=np.concatenate(pend_vals),
            minlength=nfeat,
        )
    if uni is not None:
        expected[uni[1]] += uni[2]
    full = np.empty(nfeat + 1, dtype=np.float64)
    full[:nfeat] = expected
    # features plus slack sum to C on every candidate, so the slack
    # expectation follows by subtraction
    full[nfeat] = model.slack_c * bound.total - expected.sum()
    return TrainerState(
        empirical=_empirical_vector(model, bound.total),
        expected=full,
        iteration=iteration,
        train_loglike=loglike,
        op_counter=ops,
    )


def expectation_pass(model: MaxEntModel, events: Events,
                     iteration: int = 0) -> TrainerState:
    """Model expectations, log-likelihood and op count over the events."""
    return _pass_plain(model, _BoundEvents(model.feature_set, model.space,
                                           events), iteration)


def update_lambdas(state: TrainerState, model: MaxEntModel) -> MaxEntModel:
    """Classic multiplicative update: lam += ln(empirical/expected)/C."""
    emp = state.empirical
    exp_ = state.expected
    bad = (exp_ <= 0) & (emp > 0)
    if bad.any():
        j = int(np.nonzero(bad)[0][0])
        raise GisError(
            f"expected[{j}] = 0 with empirical {emp[j]:.1f}: feature never "
            "fires on any candidate; feature/candidate-space mismatch"
        )
    lam = model.lambdas.copy()
    mask = emp > 0
    lam[mask] += np.log(emp[mask] / exp_[mask]) / model.slack_c
    if not np.isfinite(lam).all():
        raise GisError("non-finite weight after update")
    return MaxEntModel(model.feature_set, model.space, lam, model.slack_c,
                       model.iterations_run)


def _train_loop(model: MaxEntModel, bound: _BoundEvents, pass_fn,
                iterations: int, tolerance: float):
    log: list[IterationStats] = []
    for it in range(1, iterations + 1):
        t0 = time.perf_counter()
        state = pass_fn(model, bound, it)
        if not math.isfinite(state.train_loglike):
            raise GisError(f"non-finite log-likelihood at iteration {it}")
        dev = state.max_deviation()
        model = MaxEntModel(model.feature_set, model.space, model.lambdas,
                            model.slack_c, it)
        if dev <= tolerance:
            log.append(IterationStats(it, state.train_loglike,
                                      state.op_counter, dev,
                                      time.perf_counter() - t0))
            break
        model = update_lambdas(state, model)
        log.append(IterationStats(it, state.train_loglike, state.op_counter,
                                  dev, time.perf_counter() - t0))
    return model, log


def train(model: MaxEntModel, events: Events,
          iterations: int = DEFAULT_ITERATIONS,
          tolerance: float = DEFAULT_TOLERANCE):
    """Run iterative scaling until the cap or the constraint tolerance.

    Stops, without a final update, once every feature's
    |empirical/expected - 1| is within ``tolerance``, so the returned
    model reproduces the deviation that was measured.  Returns the
    trained model and per-iteration statistics.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    bound = _BoundEvents(model.feature_set, model.space, events)
    return _train_loop(model, bound, _pass_plain, iterations, tolerance)


def _pass_cached(model: MaxEntModel, bound: _BoundEvents, iteration: int):
    if model.space.group_of is not None:
        raise GisError("unigram caching requires a single candidate group")
    fset = model.feature_set
    lam = model.lambdas
    slack = float(lam[-1])
    adj = lam[:-1] - slack
    size = model.space.size
    nfeat = fset.num_features
    u_log = np.full(size, slack * model.slack_c)
    uni_map = np.full(size, -1, dtype=np.int64)
    if len(bound) and bound.entry_ids[0][0] >= 0:
        uni_targets, uni_fids = bound.tables[0][bound.entry_ids[0][0]]
        u_log[uni_targets] += adj[uni_fids]
        uni_map[uni_targets] = uni_fids
    mu = float(u_log.max())
    u = np.exp(u_log - mu)
    total_u = float(u.sum())
    expected = np.zeros(nfeat, dtype=np.float64)
    pend_fids: list[np.ndarray] = []
    pend_vals: list[np.ndarray] = []
    bulk_weight = 0.0  # sum of count/Z, scaled into the shifted domain
    loglike = 0.0
    ops = 0
    for i in range(len(bound)):
        cnt = bound.count[i]
        t = int(bound.tloc[i])
        parts_w = []
        parts_f = []
        for kind in range(1, len(TEMPLATES)):
            eid = bound.entry_ids[kind][i]
            if eid < 0:
                continue
            targets, fids = bound.tables[kind][eid]
            parts_w.append(targets)
            parts_f.append(fids)
        if not parts_w:
            z = total_u
            loglike += cnt * (float(u_log[t]) - mu - math.log(z))
            bulk_weight += cnt / z
            continue
        wc = np.concatenate(parts_w)
        fc = np.concatenate(parts_f)
        tw, inverse = np.unique(wc, return_inverse=True)
        adj_sum = np.bincount(inverse, weights=adj[fc], minlength=len(tw))
        ut = u[tw]
        st = ut * np.exp(adj_sum)
        z = total_u - float(ut.sum()) + float(st.sum())
        scale = cnt / z
        pend_fids.append(fc)
        pend_vals.append(st[inverse] * scale)
        corr = uni_map[tw] >= 0
        if corr.any():
            pend_fids.append(uni_map[tw[corr]])
            pend_vals.append((st[corr] - ut[corr]) * scale)
        bulk_weight += cnt / z
        pos = int(np.searchsorted(tw, t))
        if pos < len(tw) and tw[pos] == t:
            loglike += cnt * (float(u_log[t]) - mu + float(adj_sum[pos])
                              - math.log(z))
        else:
            loglike += cnt * (float(u_log[t]) - mu - math.log(z))
        ops += len(tw)
        if (i + 1) % _FLUSH_EVERY == 0 and pend_fids:
            expected += np.bincount(np.concatenate(pend_fids),
                                    weights=np.concatenate(pend_vals),
                                    minlength=nfeat)
            pend_fids.clear()
            pend_vals.clear()
    if pend_fids:
        expected += np.bincount(np.concatenate(pend_fids),
                                weights=np.concatenate(pend_vals),
                                minlength=nfeat)
    has_uni = uni_map >= 0
    if has_uni.any():
        expected[uni_map[has_uni]] += u[has_uni] * bulk_weight
    full = np.empty(nfeat + 1, dtype=np.float64)
    full[:nfeat] = expected
    full[nfeat] = model.slack_c * bound.total - expected.sum()
    return TrainerState(
        empirical=_empirical_vector(model, bound.total),
        expected=full,
        iteration=iteration,
        train_loglike=loglike,
        op_counter=ops,
    )


def train_unigram_cached(model: MaxEntModel, events: Events,
                         iterations: int = DEFAULT_ITERATIONS,
                         tolerance: float = DEFAULT_TOLERANCE):
    """Train with the unigram-cached inner loop; matches plain training."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    bound = _BoundEvents(model.feature_set, model.space, events)
    return _train_loop(model, bound, _pass_cached, iterations, tolerance)


def expectation_pass_cached(model: MaxEntModel, events: Events,
                            iteration: int = 0) -> TrainerState:
    """Single cached expectation pass, for op-count comparisons."""
    return _pass_cached(model, _BoundEvents(model.feature_set, model.space,
                                            events), iteration)


def save_model(model: MaxEntModel, path, target_decode=None) -> None:
    """Write the textual model file.

    Header lines are ``key value`` pairs; each feature line is
    ``id<TAB>kind<TAB>args...<TAB>lambda`` with the weight at 17
    significant digits, and the slack weight comes last with kind
    ``slack``.  ``target_decode``, when given, maps internal target ids
    back to external ones for the W argument.
    """
    fset = model.feature_set
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"candidate_space {model.space.kind}\n")
        fh.write(f"C {model.slack_c}\n")
        fh.write(f"feature_count {fset.num_features}\n")
        fh.write(f"iterations {model.iterations_run}\n")
        for feat in fset:
            args = list(feat.args)
            if target_decode is not None:
                args[0] = int(target_decode[args[0]])
            cols = [str(feat.id), feat.kind]
            cols += [str(a) for a in args]
            cols.append("%.17g" % model.lambdas[feat.id])
            fh.write("\t".join(cols) + "\n")
        fh.write(f"{fset.num_features}\tslack\t%.17g\n" % model.lambdas[-1])


def load_model(path, indicator: np.ndarray, num_targets: int,
               space: CandidateSpace, target_encode=None) -> MaxEntModel:
    """Rebuild a model from its file; inverse of :func:`save_model`.

    Feature train counts are not stored in model files; the result is for
    querying, not for resuming training.
    """
    header: dict[str, str] = {}
    kind_args: dict[int, list[tuple[int, ...]]] = {k: [] for k in
                                                   range(len(TEMPLATES))}
    lambdas: list[float] = []
    slack_lam = 0.0
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                key, value = line.split(" ", 1)
                header[key] = value
                continue
            cols = line.split("\t")
            if cols[1] == "slack":
                slack_lam = float(cols[2])
                continue
            kind = KIND_INDEX[cols[1]]
            args = [int(a) for a in cols[2:-1]]
            if target_encode is not None:
                args[0] = int(target_encode[args[0]])
            kind_args[kind].append(tuple(args))
            lambdas.append(float(cols[-1]))
    arg_arrays = []
    count_arrays = []
    for kind in range(len(TEMPLATES)):
        rows = kind_args[kind]
        width = 1 + len([s for s in TEMPLATES[kind][1:] if s is not None])
        if rows:
            mat = np.asarray(rows, dtype=np.int64)
        else:
            mat = np.zeros((0, width), dtype=np.int64)
        arg_arrays.append(tuple(mat[:, j] for j in range(mat.shape[1])))
        count_arrays.append(np.zeros(len(rows), dtype=np.int64))
    fset = FeatureSet(indicator, num_targets, arg_arrays, count_arrays)
    if fset.num_features != int(header.get("feature_count", fset.num_features)):
        raise GisError(f"{path}: feature count mismatch")
    lam = np.asarray(lambdas + [slack_lam], dtype=np.float64)
    model = MaxEntModel(fset, space, lam, int(header["C"]),
                        int(header.get("iterations", 0)))
    if space.kind != header.get("candidate_space", space.kind):
        raise GisError(f"{path}: candidate space mismatch")
    return model
