"""Malware detection from system-call traces.

Configurations and reports are plain dicts; the native core exchanges
them as JSON text.
"""

import json as _json

from . import _core
from ._core import (
    ArchiveError,
    DimensionError,
    Error,
    Model,
    ParseError,
    Trace,
    ValidationError,
    chi_square_sf,
    cochran_q,
    liquid_state,
    load_model,
    parse_trace,
    read_traces,
    sidak_alpha,
    vocabulary,
    write_traces,
)

__all__ = [
    "ArchiveError", "DimensionError", "Error", "Model", "ParseError", "Trace", "ValidationError",
    "chi_square_sf", "cochran_q", "compute_metrics", "default_corpus_config", "evaluate",
    "explain_model", "generate_corpus", "lime_explain", "liquid_state", "load_model", "mcnemar",
    "pairwise_significance", "parse_trace", "read_traces", "sidak_alpha", "reference_corpus_config",
    "train_model", "vocabulary", "write_traces",
]


def _dump(config):
    return "" if config is None else _json.dumps(config)


def default_corpus_config(seed=0, goodware=100, malware=100):
    return _json.loads(_core.default_corpus_config(seed, goodware, malware))


def reference_corpus_config(shape, scale=1.0, seed=0):
    return _json.loads(_core.reference_corpus_config(shape, scale, seed))


def generate_corpus(config):
    return _core.generate_corpus(_json.dumps(config))


def compute_metrics(predicted, truth):
    """Metrics with malware (1) as the positive class."""
    return _json.loads(_core.compute_metrics(list(predicted), list(truth)))


def mcnemar(a, b):
    return _json.loads(_core.mcnemar(list(a), list(b)))


def pairwise_significance(names, columns, alpha=0.05):
    return _json.loads(_core.pairwise_significance(list(names), [list(c) for c in columns], alpha))


def train_model(kind, traces, config=None, seed=0):
    """Train `kind` ("hist-rf", "lsm", "linear", "tree", "ensemble") on labeled traces."""
    return _core.train_model(kind, list(traces), _dump(config), seed)


def evaluate(traces, config=None):
    """Evaluation report for the models and split named in a pipeline config."""
    return _json.loads(_core.evaluate(list(traces), _dump(config)))


def explain_model(model, train, test, config=None, seed=0):
    return _json.loads(_core.explain_model(model, list(train), list(test), _dump(config), seed))


def lime_explain(model, sample, background, perturbations=1000, seed=0):
    """Local linear surrogate of `model`, a callable from a feature list to a malware score."""
    return _json.loads(_core.lime_explain(model, list(sample), list(background), perturbations, seed))
