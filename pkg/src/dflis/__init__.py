"""Data-free likelihood-informed dimension reduction for Bayesian inverse problems."""

from .linalg import (
    FactorizationError,
    GeneralizedEigenPairs,
    RankRProjector,
    SpdMatrix,
    ValidationError,
    coordinate_projector,
    generalized_eig,
    projector_from_pairs,
)
from .models import GaussianLikelihood, LinearForwardModel, PoissonLikelihood
from .priors import BesovExpansion, GaussianPrior, ProductGGPrior, gg_cdf, gg_cdf_inv, normalization_map
from .reduced import ReducedLikelihood
from .subspace import build_coordinate_projector, build_projector, data_dependent_H, data_free_H, kl_bound, select_rank

__version__ = "0.1.0"

__all__ = [
    "BesovExpansion",
    "FactorizationError",
    "GaussianLikelihood",
    "GaussianPrior",
    "GeneralizedEigenPairs",
    "LinearForwardModel",
    "PoissonLikelihood",
    "ProductGGPrior",
    "RankRProjector",
    "ReducedLikelihood",
    "SpdMatrix",
    "ValidationError",
    "build_coordinate_projector",
    "build_projector",
    "coordinate_projector",
    "data_dependent_H",
    "data_free_H",
    "generalized_eig",
    "gg_cdf",
    "gg_cdf_inv",
    "kl_bound",
    "normalization_map",
    "projector_from_pairs",
    "select_rank",
]
