"""Conditional maximum entropy language models with class-factored training."""

__version__ = "0.1.0"

from .classing import ClassHierarchy, build_hierarchy, induce_classes, \
    sweep_class_count
from .corpus import (
    Event,
    Events,
    TokenStream,
    Vocabulary,
    build_vocabulary,
    extract_events,
    tokenize,
)
from .evaluation import InterpolatedModel, TrigramLM, fit_alpha, interpolate, \
    perplexity, train_trigram
from .factored import FactoredModel, factor_events, load_model_dir, \
    save_model_dir, train_factored
from .features import Feature, FeatureSet, instantiate, restrict_to_class
from .gis import (
    CandidateSpace,
    MaxEntModel,
    TrainerState,
    build_model,
    expectation_pass,
    train,
    train_unigram_cached,
    update_lambdas,
)

__all__ = [
    "CandidateSpace",
    "ClassHierarchy",
    "Event",
    "Events",
    "FactoredModel",
    "Feature",
    "FeatureSet",
    "InterpolatedModel",
    "MaxEntModel",
    "TokenStream",
    "TrainerState",
    "TrigramLM",
    "Vocabulary",
    "build_hierarchy",
    "build_model",
    "build_vocabulary",
    "expectation_pass",
    "extract_events",
    "factor_events",
    "fit_alpha",
    "induce_classes",
    "instantiate",
    "interpolate",
    "load_model_dir",
    "perplexity",
    "restrict_to_class",
    "save_model_dir",
    "sweep_class_count",
    "tokenize",
    "train",
    "train_factored",
    "train_trigram",
    "train_unigram_cached",
    "update_lambdas",
]
