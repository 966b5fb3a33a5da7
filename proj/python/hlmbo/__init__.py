"""Human-in-the-loop meta Bayesian optimization.

Thin Python layer over the C++ core. Configurations and run records cross the
boundary as JSON; this module converts them to and from plain dicts.
"""

import json as _json

from . import _core
from ._core import (
    HlmboError,
    Model,
    Task,
    combine_posterior,
    expected_improvement,
    lime,
    noharm_weights,
    sample_space,
    shap,
    ucb,
)

__all__ = [
    "HlmboError",
    "Model",
    "Task",
    "combine_posterior",
    "expected_improvement",
    "lime",
    "make_family",
    "meta_train",
    "noharm_weights",
    "replay",
    "run",
    "sample_space",
    "shap",
    "ucb",
]


def make_family(config=None, seed=1):
    """Synthetic task family as {"train": [...], "val": [...], "test": [...]}."""
    return _core.make_family(_json.dumps(config or {}), seed)


def meta_train(family=None, tnp=None, family_seed=1, seed=1):
    """Meta-trains a surrogate on the training split of a synthetic family."""
    return _core.meta_train(_json.dumps(family or {}), family_seed, _json.dumps(tnp or {}), seed)


def run(session, task, model):
    """Runs one simulated session and returns the run record as a dict."""
    return _json.loads(_core.run(_json.dumps(session or {}), task, model))


def replay(record, task, model):
    """Re-executes a run record and returns its regret trace."""
    return _core.replay(_json.dumps(record), task, model)
