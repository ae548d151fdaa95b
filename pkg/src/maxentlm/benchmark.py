"""Training-cost benchmark across methods and corpus sizes.

For every (method, size) cell the corpus is truncated, the vocabulary
and all class maps are rebuilt from scratch at that size, and training
iterations are timed individually.  Candidate evaluations per event come
from the trainer's operation counter, so they are deterministic; timing
excludes vocabulary construction, class induction and feature
instantiation, which are reported separately in the row diagnostics.

The report is written as a TSV, and a figure of per-iteration time
relative to the baseline (log-log over training size) is rendered next
to it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter

import numpy as np

from .classing import induce_classes
from .corpus import Events, TokenStream, Vocabulary, build_vocabulary, \
    extract_events, tokenize
from .factored import train_factored
from .features import instantiate
from .gis import CandidateSpace, build_model, train, train_unigram_cached

logger = logging.getLogger(__name__)

METHODS = ("gis", "gis-cache", "factored2", "factored3")
TSV_HEADER = "method\ttrain_size\tsec_per_iter\tops_per_event\trelative_speed"


class BenchmarkError(Exception):
    """Unknown method or unusable corpus/size combination."""


@dataclass
class BenchConfig:
    max_vocab: int = 60000
    min_count: int = 3
    indicator_classes: int = 64
    iterations: int = 1
    seed: int = 0
    lowercase: bool = False


@dataclass
class BenchmarkRow:
    method: str
    train_size: int
    sec_per_iter: float
    ops_per_event: float
    relative_speed: float
    # diagnostics outside the TSV contract
    sec_spread: float = 0.0
    setup_seconds: float = 0.0
    induction_seconds: float = 0.0
    vocab_size: int = 0
    num_events: int = 0


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def to_tsv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(TSV_HEADER + "\n")
            for row in self.rows:
                fh.write(
                    f"{row.method}\t{row.train_size}\t{row.sec_per_iter:.6g}\t"
                    f"{row.ops_per_event:.6g}\t{row.relative_speed:.6g}\n"
                )


def default_level_sizes(vocab_size: int, levels: int) -> list[int]:
    """Square-root spacing for two levels, cube-root spacing for three."""
    if levels == 2:
        c = round(math.sqrt(vocab_size))
        return [max(1, min(c, vocab_size))]
    if levels == 3:
        c0 = max(1, round(vocab_size ** (1.0 / 3.0)))
        c1 = max(c0 + 1, round(vocab_size ** (2.0 / 3.0)))
        c1 = min(c1, vocab_size)
        if c1 <= c0:
            c0 = max(1, c1 - 1)
        return [c0, c1]
    raise BenchmarkError(f"unsupported level count {levels}")


def truncate_to_tokens(lines: list[str], n_tokens: int) -> list[str]:
    """Whole sentences until the token budget is reached."""
    out = []
    total = 0
    for line in lines:
        out.append(line)
        total += len(line.split())
        if total >= n_tokens:
            break
    if total < n_tokens:
        raise BenchmarkError(
            f"corpus has only {total} tokens, {n_tokens} requested"
        )
    return out


def _timed_run(method: str, events: Events, vocab: Vocabulary,
               config: BenchConfig):
    """Train one cell; returns (per-iteration seconds, ops list, setup s, induction s)."""
    t_setup = perf_counter()
    induction = 0.0
    t0 = perf_counter()
    n_ind = min(config.indicator_classes, len(vocab))
    indicator = induce_classes(events, vocab, n_ind,
                               seed=config.seed).paths[:, 0]
    induction += perf_counter() - t0
    if method in ("gis", "gis-cache"):
        fset = instantiate(events, indicator, threshold=config.min_count,
                           num_targets=len(vocab))
        model = build_model(fset, CandidateSpace.full("words", len(vocab)),
                            events)
        setup = perf_counter() - t_setup
        trainer = train if method == "gis" else train_unigram_cached
        _, log = trainer(model, events, iterations=config.iterations,
                         tolerance=0.0)
        secs = [row.seconds for row in log]
        ops = [row.op_count for row in log]
    elif method in ("factored2", "factored3"):
        levels = 2 if method == "factored2" else 3
        sizes = default_level_sizes(len(vocab), levels)
        t0 = perf_counter()
        from .classing import build_hierarchy

        hierarchy = build_hierarchy(events, vocab, sizes, seed=config.seed)
        induction += perf_counter() - t0
        setup = perf_counter() - t_setup
        _, logs = train_factored(events, hierarchy, indicator,
                                 threshold=config.min_count,
                                 iterations=config.iterations, tolerance=0.0,
                                 vocab_size=len(vocab))
        iters = min(len(lg) for lg in logs)
        secs = [sum(lg[i].seconds for lg in logs) for i in range(iters)]
        ops = [sum(lg[i].op_count for lg in logs) for i in range(iters)]
    else:
        raise BenchmarkError(f"unknown method {method!r}")
    return secs, ops, setup, induction


def benchmark(methods, sizes, lines: list[str],
              config: BenchConfig | None = None) -> BenchmarkReport:
    """Time every (method, size) cell; rows come out in method-major order
    per size, matching the input method list.
    """
    config = config or BenchConfig()
    methods = list(methods)
    sizes = sorted(int(s) for s in sizes)
    for m in methods:
        if m not in METHODS:
            raise BenchmarkError(f"unknown method {m!r}")
    if not sizes:
        raise BenchmarkError("no sizes given")
    baseline = "gis" if "gis" in methods else methods[0]
    report = BenchmarkReport()
    for size in sizes:
        slice_lines = truncate_to_tokens(lines, size)
        vocab = build_vocabulary(slice_lines, max_size=config.max_vocab,
                                 lowercase=config.lowercase)
        events = extract_events(tokenize(slice_lines, vocab,
                                         lowercase=config.lowercase))
        cells = {}
        for method in methods:
            secs, ops, setup, induction = _timed_run(method, events, vocab,
                                                     config)
            sec_per_iter = float(np.mean(secs))
            spread = float(np.max(secs) - np.min(secs)) if len(secs) > 1 else 0.0
            row = BenchmarkRow(
                method=method,
                train_size=size,
                sec_per_iter=sec_per_iter,
                ops_per_event=float(np.mean(ops)) / len(events),
                relative_speed=1.0,
                sec_spread=spread,
                setup_seconds=setup,
                induction_seconds=induction,
                vocab_size=len(vocab),
                num_events=len(events),
            )
            cells[method] = row
            logger.info(
                "bench %s@%d: %.3gs/iter (spread %.2g) ops/event %.1f "
                "setup %.3gs induction %.3gs vocab %d events %d",
                method, size, row.sec_per_iter, row.sec_spread,
                row.ops_per_event, setup, induction, len(vocab), len(events),
            )
        base = cells[baseline].sec_per_iter
        for method in methods:
            cells[method].relative_speed = base / cells[method].sec_per_iter
            report.rows.append(cells[method])
    return report


def render_speed_figure(report: BenchmarkReport, path) -> None:
    """Per-iteration time relative to the baseline, log-log over size."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    methods = []
    for row in report.rows:
        if row.method not in methods:
            methods.append(row.method)
    markers = "osd^v"
    for i, method in enumerate(methods):
        pts = [(row.train_size, 1.0 / row.relative_speed)
               for row in report.rows if row.method == method]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker=markers[i % len(markers)], label=method)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("training size (tokens)")
    ax.set_ylabel("time per iteration relative to baseline")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
