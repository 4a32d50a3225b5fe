"""GEE analysis of crossover designs: carry-over indicator construction,
working-correlation estimation (including between x within Kronecker
products), quasi-likelihood model selection and semiparametric effect
curves."""

from .correlation import (build_correlation, estimate_alpha, kronecker,
                          make_correlation, working_covariance)
from .design import (CarrySet, DesignFrame, create_carry,
                     encode_design_matrix, load_design)
from .family import (FamilySpec, ResidualSet, estimate_dispersion, get_family,
                     pearson_residuals, quasi_likelihood, standardize)
from .gee import FitControl, GeeFit, fit_gee, sandwich_covariance, score, wald_table
from .kron import KronFit, estimate_between, fit_gee_kron
from .selection import CriteriaRecord, compare, compute_criteria
from .semiparam import (EffectCurve, SpFit, SplineBasis, bspline_basis,
                        effect_curves, fit_gee_sp)
from .simulate import Scenario, scenario_from_dict, simulate_design

__version__ = "0.1.0"

__all__ = [
    "CarrySet", "CriteriaRecord", "DesignFrame", "EffectCurve", "FamilySpec",
    "FitControl", "GeeFit", "KronFit", "ResidualSet", "Scenario", "SpFit",
    "SplineBasis", "bspline_basis", "build_correlation", "compare",
    "compute_criteria", "create_carry", "effect_curves", "encode_design_matrix",
    "estimate_alpha", "estimate_between", "estimate_dispersion", "fit_gee",
    "fit_gee_kron", "fit_gee_sp", "get_family", "kronecker", "load_design",
    "make_correlation", "pearson_residuals", "quasi_likelihood",
    "sandwich_covariance", "scenario_from_dict", "score", "simulate_design",
    "standardize", "wald_table", "working_covariance", "__version__",
]
