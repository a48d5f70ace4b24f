"""Maximum likelihood with a parametric model for the censored covariate.

Uncensored rows contribute the usual score; a censored row contributes the
score averaged over ``f(x | y, z)`` restricted to ``x > w``. The censoring
mechanism never enters, so the estimator is consistent whenever the model
for the covariate given ``z`` is right.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import weibull_aft as aft
from ..numeric import DEFAULT_RULE, QuadratureRule, SolverConfig
from .common import DEFAULT_SOLVER, finish, fit_covariate_model, solve_mean
from .data import Dataset, EstimateResult
from .outcome import ConditionalX, dataset_scores, weighted_least_squares

GAMMA_SOURCES = ("true", "fitted", "supplied")


def fit_mle(data: Dataset, gamma_source: str = "fitted", gamma: Optional[aft.AftParams] = None,
            rule: QuadratureRule = DEFAULT_RULE, solver: SolverConfig = DEFAULT_SOLVER
            ) -> EstimateResult:
    """Likelihood score equation integrating out censored covariate values.

    Parameters
    ----------
    gamma_source : {"true", "fitted", "supplied"}
        ``fitted`` estimates the Weibull model of the covariate given ``z``
        from ``(w, delta)`` and corrects the sandwich for that step;
        otherwise ``gamma`` is taken as known.
    gamma : AftParams, optional
        Covariate model for ``true``/``supplied``.
    """
    if gamma_source not in GAMMA_SOURCES:
        raise ValueError(f"gamma_source must be one of {GAMMA_SOURCES}")
    nuisance = None
    if gamma_source == "fitted":
        nuisance = fit_covariate_model(data)
        gamma = nuisance.params
    elif gamma is None:
        raise ValueError("gamma is required unless it is fitted")

    censored = data.delta == 0
    observed = data.delta[:, None]
    grid = ConditionalX(data, gamma, rows=censored, truncate=True, rule=rule)

    def rows_at(theta, gamma_vec=None):
        cond = grid
        if gamma_vec is not None:
            cond = ConditionalX(data, aft.AftParams.from_vector(gamma_vec), rows=censored,
                                truncate=True, rule=rule)
        out = observed * dataset_scores(data, data.w, theta)
        if censored.any():
            out[censored] = cond.expected_score(theta)
        return out

    start = weighted_least_squares(data, data.w, data.delta)
    theta = solve_mean(rows_at, start, solver)
    return finish("mle", data, theta, rows_at, nuisance=nuisance, rows_fn_nuisance=rows_at,
                  metadata={"gamma_source": gamma_source}, solver=solver)
