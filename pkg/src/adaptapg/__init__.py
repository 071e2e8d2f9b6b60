"""Accelerated proximal gradient methods that estimate strong convexity online."""

from .estimators import Converged, MuEstimator, hat_mu, mu_local
from .problems import (
    BoxIndicator,
    CompositeProblem,
    L1Penalty,
    LeastSquares,
    Logistic,
    MaskedSquares,
    NuclearPenalty,
    Quadratic,
    SVMDual,
    ZeroPenalty,
    composite_value,
    estimate_L,
    gradient_map,
    prox_box,
    prox_l1,
    prox_nuclear,
    reduced_gradient,
)
from .solvers import (
    DivergenceError,
    ExternalSequence,
    KnownMu,
    OnlineEstimator,
    SolverConfig,
    Trace,
    adapt_apg,
    adapt_apg_v2,
    apg_estimate_sequence,
    apg_known_mu,
    apg_restart,
    fista,
    pgd,
)

__version__ = "0.1.0"

__all__ = [
    "BoxIndicator",
    "CompositeProblem",
    "Converged",
    "DivergenceError",
    "ExternalSequence",
    "KnownMu",
    "L1Penalty",
    "LeastSquares",
    "Logistic",
    "MaskedSquares",
    "MuEstimator",
    "NuclearPenalty",
    "OnlineEstimator",
    "Quadratic",
    "SVMDual",
    "SolverConfig",
    "Trace",
    "ZeroPenalty",
    "adapt_apg",
    "adapt_apg_v2",
    "apg_estimate_sequence",
    "apg_known_mu",
    "apg_restart",
    "composite_value",
    "estimate_L",
    "fista",
    "gradient_map",
    "hat_mu",
    "mu_local",
    "pgd",
    "prox_box",
    "prox_l1",
    "prox_nuclear",
    "reduced_gradient",
]
