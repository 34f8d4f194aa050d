"""Paired autoencoders for linear inverse problems.

Submodules: ``numerics``, ``linear_pair``, ``operators``, ``datasets``,
``pmat``, ``neural``, ``metrics``, ``persistence``, ``experiments``, ``cli``.
"""

from ._version import __version__
from .linear_pair import (
    LatentMap,
    LinearAutoencoder,
    PairModel,
    fit_bayes_pair,
    fit_empirical_pair,
)
from .metrics import PairMetrics, auroc, pair_metrics, relative_error

__all__ = [
    "LatentMap",
    "LinearAutoencoder",
    "PairMetrics",
    "PairModel",
    "__version__",
    "auroc",
    "fit_bayes_pair",
    "fit_empirical_pair",
    "pair_metrics",
    "relative_error",
]
