"""Estimators for linear regression with a right-censored covariate."""

from .baseline import fit_acc, fit_cc, fit_cmi, fit_macc, fit_naive, fit_oracle
from .common import INCONSISTENT, Nuisance, fit_censoring_model, fit_covariate_model
from .data import Dataset, EstimateResult, Observation, ThetaParams, coefficient_names
from .mle import fit_mle
from .outcome import (ConditionalX, compute_pi, pi_rows, psi_closed, psi_eff, score_theta)
from .weighted import AipwConfig, fit_aipw, fit_ipw, lambda_matrix

__all__ = [
    "AipwConfig", "ConditionalX", "Dataset", "EstimateResult", "INCONSISTENT", "Nuisance",
    "Observation", "ThetaParams", "coefficient_names", "compute_pi", "fit_acc", "fit_aipw",
    "fit_cc", "fit_censoring_model", "fit_cmi", "fit_covariate_model", "fit_ipw", "fit_macc",
    "fit_mle", "fit_naive", "fit_oracle", "lambda_matrix", "pi_rows", "psi_closed", "psi_eff",
    "score_theta",
]
