"""Bayesian unit-level longitudinal small area estimation."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    NumericError,
    TulmError,
    box_cox,
    interval_score,
    inverse_box_cox,
    inverse_gamma,
    polya_gamma,
    run_cli,
    truncated_normal,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "TulmError",
    "box_cox",
    "direct",
    "fit",
    "interval_score",
    "inverse_box_cox",
    "inverse_gamma",
    "polya_gamma",
    "run_cli",
    "truncated_normal",
]

__version__ = "0.1.0"


def _config_text(config):
    if isinstance(config, dict):
        return _json.dumps(config)
    with open(config) as f:
        return f.read()


def fit(config, seed):
    """Fit the model described by a config dict or JSON file path.

    Returns a list of dicts of posterior draws (numpy arrays): one entry for
    the longitudinal model, one per week for the cross-sectional one.
    """
    return _core.fit(_config_text(config), int(seed))


def direct(config):
    """Direct domain estimates as a list of dicts, one per (area, week)."""
    return _core.direct(_config_text(config))
