"""Command-line pipeline: corpus -> classes -> features -> training -> eval.

Subcommands hand data off through files so the expensive stages can be
re-run independently.  Every run echoes its resolved configuration to a
JSON file next to its output, and a run started from that file
reproduces the outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (
    METHODS,
    BenchConfig,
    benchmark,
    default_level_sizes,
    render_speed_figure,
)
from .classing import ClassHierarchy, build_hierarchy, induce_classes
from .corpus import Vocabulary, build_vocabulary, extract_events, tokenize
from .evaluation import InterpolatedModel, fit_alpha, perplexity, train_trigram
from .factored import load_model_dir, save_model_dir, train_factored
from .features import instantiate
from .gis import CandidateSpace, build_model, train, train_unigram_cached

logger = logging.getLogger(__name__)

TRAIN_METHODS = METHODS


def _parse_sizes(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _echo_config(args: argparse.Namespace, target: Path) -> None:
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("func",) and not k.startswith("_")}
    for key, value in resolved.items():
        if isinstance(value, Path):
            resolved[key] = str(value)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_vocab(args) -> Vocabulary:
    if getattr(args, "vocab", None):
        return Vocabulary.load(args.vocab)
    return build_vocabulary(args.corpus, max_size=args.max_vocab,
                            lowercase=args.lowercase)


def _load_indicator(args, vocab, events) -> np.ndarray:
    if getattr(args, "indicator_map", None):
        return ClassHierarchy.load(args.indicator_map, vocab).paths[:, 0]
    n = min(args.indicator_classes, len(vocab))
    return induce_classes(events, vocab, n, seed=args.seed).paths[:, 0]


def _cmd_build_vocab(args) -> int:
    vocab = build_vocabulary(args.corpus, max_size=args.max_vocab,
                             lowercase=args.lowercase)
    vocab.save(args.output)
    _echo_config(args, Path(str(args.output) + ".config.json"))
    print(f"vocabulary {len(vocab)} words ({vocab.content_size} content) "
          f"-> {args.output}")
    return 0


def _cmd_induce_classes(args) -> int:
    vocab = _load_vocab(args)
    events = extract_events(tokenize(args.corpus, vocab,
                                     lowercase=args.lowercase))
    if args.level_sizes:
        sizes = _parse_sizes(args.level_sizes)
        hierarchy = build_hierarchy(events, vocab, sizes, seed=args.seed)
    else:
        hierarchy = induce_classes(events, vocab, args.num_classes,
                                   seed=args.seed)
    hierarchy.save(args.output, vocab)
    _echo_config(args, Path(str(args.output) + ".config.json"))
    print(f"classes {hierarchy.sizes} over {len(vocab)} words -> {args.output}")
    return 0


def _cmd_extract_features(args) -> int:
    vocab = _load_vocab(args)
    events = extract_events(tokenize(args.corpus, vocab,
                                     lowercase=args.lowercase))
    indicator = _load_indicator(args, vocab, events)
    fset = instantiate(events, indicator, threshold=args.min_count,
                       num_targets=len(vocab))
    fset.dump(args.output)
    _echo_config(args, Path(str(args.output) + ".config.json"))
    print(f"{fset.num_features} features -> {args.output}")
    return 0


def _write_train_log(path: Path, logs) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("level\titeration\tloglike\top_count\tmax_dev\tseconds\n")
        for level, rows in enumerate(logs):
            for row in rows:
                fh.write(f"{level}\t{row.iteration}\t{row.loglike:.6f}\t"
                         f"{row.op_count}\t{row.max_dev:.6g}\t"
                         f"{row.seconds:.6g}\n")


def _cmd_train(args) -> int:
    outdir = Path(args.output)
    vocab = _load_vocab(args)
    events = extract_events(tokenize(args.corpus, vocab,
                                     lowercase=args.lowercase))
    indicator = _load_indicator(args, vocab, events)
    if args.method in ("gis", "gis-cache"):
        fset = instantiate(events, indicator, threshold=args.min_count,
                           num_targets=len(vocab))
        model = build_model(fset, CandidateSpace.full("words", len(vocab)),
                            events)
        trainer = train if args.method == "gis" else train_unigram_cached
        model, log = trainer(model, events, iterations=args.iterations,
                             tolerance=args.tolerance)
        logs = [log]
    else:
        if args.classes:
            hierarchy = ClassHierarchy.load(args.classes, vocab)
        else:
            levels = 2 if args.method == "factored2" else 3
            if args.level_sizes:
                sizes = _parse_sizes(args.level_sizes)
            else:
                sizes = default_level_sizes(len(vocab), levels)
            hierarchy = build_hierarchy(events, vocab, sizes, seed=args.seed)
        model, logs = train_factored(events, hierarchy, indicator,
                                     threshold=args.min_count,
                                     iterations=args.iterations,
                                     tolerance=args.tolerance,
                                     vocab_size=len(vocab))
    save_model_dir(outdir, vocab, indicator, model, args.method)
    _write_train_log(outdir / "train_log.tsv", logs)
    _echo_config(args, outdir / "config.json")
    final_ll = sum(rows[-1].loglike for rows in logs)
    print(f"trained {args.method}: {sum(len(r) for r in logs)} iterations, "
          f"final loglike {final_ll:.2f} -> {outdir}")
    return 0


def _cmd_eval(args) -> int:
    model, vocab, _ = load_model_dir(args.model_dir)
    test_stream = tokenize(args.test, vocab, lowercase=args.lowercase)
    if args.interpolate:
        if not args.train_corpus:
            raise SystemExit("--interpolate requires --train-corpus")
        train_events = extract_events(tokenize(args.train_corpus, vocab,
                                               lowercase=args.lowercase))
        trigram = train_trigram(train_events, len(vocab))
        if args.alpha is not None:
            alpha = args.alpha
        else:
            if args.heldout:
                held_stream = tokenize(args.heldout, vocab,
                                       lowercase=args.lowercase)
            else:
                # carve the tail tenth of the training text for the weight
                lines = Path(args.train_corpus).read_text(
                    encoding="utf-8").splitlines()
                cut = max(1, len(lines) - max(1, len(lines) // 10))
                held_stream = tokenize(lines[cut:], vocab,
                                       lowercase=args.lowercase)
            alpha = fit_alpha(model, trigram, held_stream)
        model = InterpolatedModel(model, trigram, alpha)
        print(f"alpha {alpha:.4f}")
    token_log = [] if args.token_log else None
    ppl = perplexity(model, test_stream, token_log=token_log)
    if args.token_log:
        with Path(args.token_log).open("w", encoding="utf-8") as fh:
            fh.write("position\tword\tlogprob\n")
            for position, w, lp in token_log:
                fh.write(f"{position}\t{vocab[w]}\t{lp:.17g}\n")
        _echo_config(args, Path(str(args.token_log) + ".config.json"))
    print(f"perplexity {ppl:.12g}")
    return 0


def _cmd_bench(args) -> int:
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    config = BenchConfig(max_vocab=args.max_vocab, min_count=args.min_count,
                         indicator_classes=args.indicator_classes,
                         iterations=args.iterations, seed=args.seed,
                         lowercase=args.lowercase)
    report = benchmark(args.methods.split(","), _parse_sizes(args.sizes),
                       lines, config)
    report.to_tsv(outdir / "report.tsv")
    render_speed_figure(report, outdir / "speedup.png")
    _echo_config(args, outdir / "config.json")
    for row in report.rows:
        print(f"{row.method}\t{row.train_size}\t{row.sec_per_iter:.4g}\t"
              f"{row.ops_per_event:.1f}\t{row.relative_speed:.3g}")
    print(f"report -> {outdir / 'report.tsv'}, figure -> "
          f"{outdir / 'speedup.png'}")
    return 0


def _add_common(parser, corpus=True):
    if corpus:
        parser.add_argument("--corpus", required=True,
                            help="training text, one sentence per line")
    parser.add_argument("--max-vocab", type=int, default=60000,
                        help="content-word cap (default 60000)")
    parser.add_argument("--min-count", type=int, default=3,
                        help="feature count threshold (default 3)")
    parser.add_argument("--indicator-classes", type=int, default=64,
                        help="class count for history templates (default 64)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("MAXENT_THREADS", "1")),
                        help="worker threads (execution is deterministic)")
    parser.add_argument("--lowercase", action="store_true",
                        help="lowercase the input text")
    parser.add_argument("--config", default=None,
                        help="JSON file of defaults (flags still override)")


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxentlm",
        description="Conditional maximum entropy language models with "
                    "class-factored training",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []
    _add_parser = sub.add_parser

    def add_parser(*a, **kw):
        p = _add_parser(*a, **kw)
        subparsers.append(p)
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("build-vocab", help="build a frequency vocabulary")
    _add_common(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("induce-classes", help="cluster words into classes")
    _add_common(p)
    p.add_argument("--output", required=True)
    p.add_argument("--vocab", default=None, help="existing vocabulary file")
    p.add_argument("--num-classes", type=int, default=64)
    p.add_argument("--level-sizes", default=None,
                   help="comma list for a nested hierarchy, e.g. 10,100")
    p.set_defaults(func=_cmd_induce_classes)

    p = sub.add_parser("extract-features", help="dump the feature inventory")
    _add_common(p)
    p.add_argument("--output", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--indicator-map", default=None,
                   help="class map for history templates")
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("train", help="train a model end to end")
    _add_common(p)
    p.add_argument("--output", required=True, help="model output directory")
    p.add_argument("--method", choices=TRAIN_METHODS, default="factored2")
    p.add_argument("--vocab", default=None)
    p.add_argument("--classes", default=None,
                   help="class map for factoring (built if absent)")
    p.add_argument("--indicator-map", default=None)
    p.add_argument("--level-sizes", default=None)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="measure perplexity on held-out text")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--test", required=True, help="evaluation text")
    p.add_argument("--interpolate", action="store_true",
                   help="mix with a count trigram model")
    p.add_argument("--train-corpus", default=None,
                   help="text for the trigram counts")
    p.add_argument("--heldout", default=None,
                   help="text for fitting the interpolation weight")
    p.add_argument("--alpha", type=float, default=None,
                   help="fixed interpolation weight in [0,1]")
    p.add_argument("--token-log", default=None,
                   help="write per-token position/word/logprob")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="compare training cost across methods")
    _add_common(p)
    p.add_argument("--output", required=True, help="report directory")
    p.add_argument("--sizes", required=True,
                   help="comma list of training token counts")
    p.add_argument("--methods", default="gis,gis-cache,factored2",
                   help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--iterations", type=int, default=1,
                   help="timed iterations per cell")
    p.set_defaults(func=_cmd_bench)

    if defaults:
        filtered = {k: v for k, v in defaults.items()
                    if k not in ("command", "func", "config")}
        # defaults set on the top parser do not reach subparser arguments
        for p in [parser] + subparsers:
            p.set_defaults(**filtered)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            stored = json.load(fh)
        args = build_parser(defaults=stored).parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
