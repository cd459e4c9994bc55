"""Mediation analysis for (stratified) case-control samples with a
binary outcome and a binary mediator."""

from .correction import (PrevalenceDesign, Theta, adjust_to_star,
                         compute_prevalence_design, g_term,
                         marginal_outcome_logit, offset_o,
                         unadjust_from_star)
from .data_model import (Dataset, DesignPartition, ModelFormula, build_design,
                         design_row, expand_beta, load_csv, parse_formula)
from .effects import EffectEstimate, compute_effects, contrast_table
from .logistic import expit, fit_logistic, logit
from .mest import FitResult, fit_m
from .mle import MlOptions, fit_ml
from .simulate import SimScenario, run_monte_carlo, scenario_1, scenario_2
from .weighting import fit_weighting

__all__ = [
    "Dataset", "DesignPartition", "ModelFormula", "PrevalenceDesign",
    "Theta", "FitResult", "MlOptions", "SimScenario", "EffectEstimate",
    "load_csv", "parse_formula", "build_design", "design_row", "expand_beta",
    "expit", "logit", "fit_logistic", "compute_prevalence_design",
    "adjust_to_star", "unadjust_from_star", "offset_o", "g_term",
    "marginal_outcome_logit", "fit_m", "fit_ml", "fit_weighting",
    "compute_effects", "contrast_table", "run_monte_carlo", "scenario_1",
    "scenario_2",
]

__version__ = "0.1.0"
