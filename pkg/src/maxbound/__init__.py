"""Martingale maximal inequalities: pathwise functional, marginal-based upper
bounds, extremal embeddings and sharp Doob-type constants."""

from .core import (
    UNBOUNDED_BELOW,
    BoundaryVector,
    BoundReport,
    FlooredLinear,
    Identity,
    IndicatorThreshold,
    Linear,
    MarginalSnapshot,
    MonteCarloEnsemble,
    PiecewiseLinear,
    Power,
    StoppingBoundaryVector,
    Tabulated,
    TimeGrid,
    check_integrability,
    evaluate_boundary,
)

__version__ = "0.1.0"
