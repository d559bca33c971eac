"""Orthonormal polynomial chaos expansions."""

from .basis import BasisSet, InputModel, Marginal, enumerate_basis, eval_basis, uniform_model
from .model import PceModel, closed_index, partial_variances, sobol_from_pce
from .regression import PceFit, aols, cv_error, hybrid_lar, lar_ranking, ols, ols_matrix, wls

__all__ = [
    "BasisSet", "InputModel", "Marginal", "PceFit", "PceModel", "aols", "closed_index",
    "cv_error", "enumerate_basis", "eval_basis", "hybrid_lar", "lar_ranking", "ols", "ols_matrix",
    "partial_variances", "sobol_from_pce", "uniform_model", "wls",
]
