"""Benchmark and baseline estimators.

The oracle uses the true covariate and serves as a no-censoring benchmark.
The naive, complete-case, imputation and complete-case-augmented
estimators are biased when censoring depends on the outcome; their results
carry the ``inconsistent_under_outcome_dependent_censoring`` flag.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import weibull_aft as aft
from ..errors import DataError, NonConvergence, TooFewComplete
from ..numeric import DEFAULT_RULE, QuadratureRule, SolverConfig
from .common import DEFAULT_SOLVER, finish, projection_matrix, solve_mean
from .data import Dataset, EstimateResult
from .outcome import (ConditionalX, check_weights, dataset_scores, pi_rows, score_jacobian_rows,
                      weighted_least_squares)

CMI_TOLERANCE = 1e-6
CMI_MAX_CYCLES = 100


def _least_squares_fit(estimator_id, data, x, weights, *, inconsistent, n_used=None,
                       metadata=None):
    theta = weighted_least_squares(data, x, weights)
    wts = np.asarray(weights, dtype=float)

    def rows_fn(th):
        return wts[:, None] * dataset_scores(data, x, th)

    bread = np.einsum("i,ijk->jk", wts, score_jacobian_rows(data, x, theta)) / data.n
    return finish(estimator_id, data, theta, rows_fn, bread=bread, n_used=n_used,
                  inconsistent=inconsistent, metadata=metadata)


def fit_oracle(data: Dataset) -> EstimateResult:
    """Normal linear model fitted to the true (latent) covariate values."""
    if data.latent_x is None:
        raise DataError("the oracle estimator needs the latent covariate values")
    return _least_squares_fit("oracle", data, data.latent_x, np.ones(data.n),
                              inconsistent=False)


def fit_naive(data: Dataset) -> EstimateResult:
    """Treats the observed value ``w`` as if it were the covariate."""
    return _least_squares_fit("naive", data, data.w, np.ones(data.n), inconsistent=True)


def _require_complete(data: Dataset):
    n_complete = int(data.delta.sum())
    needed = data.n_z + 4
    if n_complete < needed:
        raise TooFewComplete(f"{n_complete} uncensored rows; at least {needed} are needed")
    return n_complete


def fit_cc(data: Dataset) -> EstimateResult:
    """Complete-case analysis: censored rows are discarded."""
    n_complete = _require_complete(data)
    return _least_squares_fit("cc", data, data.w, data.delta, inconsistent=True,
                              n_used=n_complete)


def fit_cmi(data: Dataset, variant: str, gamma: aft.AftParams,
            rule: QuadratureRule = DEFAULT_RULE, solver: SolverConfig = DEFAULT_SOLVER,
            max_cycles: int = CMI_MAX_CYCLES, tolerance: float = CMI_TOLERANCE) -> EstimateResult:
    """Conditional mean imputation of censored covariate values.

    Parameters
    ----------
    variant : {"given_z", "given_y_z_censored"}
        ``given_z`` imputes ``E[X | z]`` from the Weibull model ``gamma``.
        ``given_y_z_censored`` imputes ``E[X | y, z, X > w]`` using the
        conditional density implied by the current outcome model and
        ``gamma``; imputation and fitting alternate until the estimate moves
        by less than ``tolerance``.
    gamma : AftParams
        Weibull AFT model for the covariate given ``z``.
    """
    censored = data.delta == 0
    if variant == "given_z":
        x_hat = data.w.copy()
        x_hat[censored] = aft.weibull_mean(data.z[censored], gamma)
        return _least_squares_fit("cmi_z", data, x_hat, np.ones(data.n), inconsistent=True,
                                  metadata={"variant": variant})
    if variant != "given_y_z_censored":
        raise ValueError(f"unknown imputation variant {variant!r}")

    if not censored.any():
        return _least_squares_fit("cmi_y_z", data, data.w, np.ones(data.n),
                                  inconsistent=True, metadata={"variant": variant})
    cond = ConditionalX(data, gamma, rows=censored, truncate=True, rule=rule)

    def impute(theta):
        x_hat = data.w.copy()
        x_hat[censored] = cond.expected_x(theta)
        return x_hat

    theta = weighted_least_squares(data, data.w, data.delta)
    for cycle in range(1, max_cycles + 1):
        new = weighted_least_squares(data, impute(theta), np.ones(data.n))
        change = np.max(np.abs(new - theta))
        theta = new
        if change < tolerance:
            break
    else:
        raise NonConvergence(f"imputation did not settle in {max_cycles} cycles")

    def rows_fn(th):
        return dataset_scores(data, impute(th), th)

    # polish the fixed point so the estimating function is solved to tolerance
    theta = solve_mean(rows_fn, theta, solver)
    return finish("cmi_y_z", data, theta, rows_fn, inconsistent=True,
                  metadata={"variant": variant, "cycles": cycle})


def _augmented_cc(estimator_id, data, gamma, rule, solver, use_lambda, weight_fn):
    """Complete-case score plus ``weight(theta) * Lambda Psi_closed(theta)``."""
    n_complete = _require_complete(data)
    cc = weighted_least_squares(data, data.w, data.delta)
    active = weight_fn(cc, None) != 0
    if not active.any():
        return _least_squares_fit(estimator_id, data, data.w, data.delta, inconsistent=True,
                                  n_used=n_complete, metadata={"lambda": use_lambda})
    cond = ConditionalX(data, gamma, rows=active, rule=rule)

    def augmentation(theta):
        out = np.zeros((data.n, theta.size))
        out[active] = weight_fn(theta, cond)[:, None] * cond.expected_score(theta)
        return out

    if use_lambda:
        base = data.delta[:, None] * dataset_scores(data, data.w, cc)
        lam = projection_matrix(base, augmentation(cc))
    else:
        lam = np.eye(cc.size)

    def rows_fn(th):
        return data.delta[:, None] * dataset_scores(data, data.w, th) + augmentation(th) @ lam.T

    theta = solve_mean(rows_fn, cc, solver)
    return finish(estimator_id, data, theta, rows_fn, n_used=data.n, inconsistent=True,
                  metadata={"lambda": use_lambda, "lambda_matrix": lam})


def fit_acc(data: Dataset, eta: Optional[aft.AftParams], gamma: aft.AftParams,
            use_lambda: bool = True, rule: QuadratureRule = DEFAULT_RULE,
            solver: SolverConfig = DEFAULT_SOLVER) -> EstimateResult:
    """Augmented complete case with weight ``delta - P(delta = 1 | y, z)``.

    The marginal observation probability integrates the censoring survival
    over ``f(x | y, z)``. ``eta=None`` means censoring never occurs.
    """
    def weight(theta, cond):
        if eta is None:
            return data.delta - 1.0 if cond is None else data.delta[cond.index] - 1.0
        if cond is None:
            return np.ones(data.n)  # every row may carry augmentation
        return data.delta[cond.index] - cond.observation_probability(
            theta, cond.censoring_hazard(eta))

    return _augmented_cc("acc", data, gamma, rule, solver, use_lambda, weight)


def fit_macc(data: Dataset, eta: Optional[aft.AftParams], gamma: aft.AftParams,
             use_lambda: bool = True, rule: QuadratureRule = DEFAULT_RULE,
             solver: SolverConfig = DEFAULT_SOLVER) -> EstimateResult:
    """Complete-case score with an inverse-probability augmentation weight
    ``1 - delta / pi(y, w, z)``. ``eta=None`` means censoring never occurs.
    """
    pi = np.ones(data.n) if eta is None else check_weights(data, pi_rows(data, eta))
    aug_weight = 1.0 - data.delta / pi

    def weight(theta, cond):
        return aug_weight if cond is None else aug_weight[cond.index]

    return _augmented_cc("macc", data, gamma, rule, solver, use_lambda, weight)
