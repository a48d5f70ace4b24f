"""Inverse probability weighted and augmented estimators.

The IPW estimating function is ``delta S(y, w, z) / pi`` with
``pi = P(C >= w | y, z)``. The augmented version adds
``(1 - delta / pi) Psi(y, z)`` for an augmentation function ``Psi`` of the
fully observed data; it has mean zero whenever ``pi`` is correct, so the
estimator stays consistent for any ``Psi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import weibull_aft as aft
from ..errors import DataError
from ..numeric import DEFAULT_RULE, QuadratureRule, SolverConfig, finite_diff_jacobian
from .common import (DEFAULT_SOLVER, NUISANCE_FD_STEP, Nuisance, finish, fit_censoring_model,
                     projection_matrix, solve_mean)
from .data import Dataset, EstimateResult
from .outcome import (ConditionalX, check_weights, dataset_scores, efficient_tilt, pi_rows,
                      score_jacobian_rows, weighted_least_squares)

PI_SOURCES = ("true_params", "fitted", "supplied_weights")
AUGMENTATIONS = ("none", "eff", "closed", "closed_with_lambda")


@dataclass(frozen=True)
class AipwConfig:
    """Options for :func:`fit_aipw`.

    Attributes
    ----------
    augmentation : {"none", "eff", "closed", "closed_with_lambda"}
        ``none`` is plain IPW; ``eff`` uses the efficient ratio
        ``E[(1 - 1/pi) S] / E[1 - 1/pi]``; ``closed`` uses ``E[S | y, z]``;
        ``closed_with_lambda`` premultiplies ``E[S | y, z]`` by the matrix
        minimising the variance of the estimating function.
    pi_source : {"true_params", "fitted", "supplied_weights"}
        Where the observation probabilities come from.
    eta : AftParams, optional
        Censoring model for ``true_params``. With ``supplied_weights`` it is
        only used inside the efficient augmentation. ``None`` with
        ``true_params`` means censoring never happens (``pi = 1``).
    weights : array_like, optional
        Per-row probabilities for ``supplied_weights``.
    x_given_z : AftParams, optional
        Weibull model of the covariate given ``z``; required by every
        augmentation except ``none``.
    quadrature : QuadratureRule
    """

    augmentation: str = "closed_with_lambda"
    pi_source: str = "fitted"
    eta: Optional[aft.AftParams] = None
    weights: Optional[np.ndarray] = None
    x_given_z: Optional[aft.AftParams] = None
    quadrature: QuadratureRule = DEFAULT_RULE

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}")
        if self.pi_source not in PI_SOURCES:
            raise ValueError(f"pi_source must be one of {PI_SOURCES}")
        if self.augmentation != "none" and self.x_given_z is None:
            raise ValueError(f"augmentation {self.augmentation!r} needs x_given_z")
        if self.pi_source == "supplied_weights" and self.weights is None:
            raise ValueError("supplied_weights requires weights")


class _Probabilities:
    """Resolves the observation probabilities for a pi source."""

    def __init__(self, data: Dataset, pi_source: str, eta=None, weights=None):
        self.data = data
        self.nuisance: Optional[Nuisance] = None
        if pi_source == "fitted":
            self.nuisance = fit_censoring_model(data)
            self.eta = self.nuisance.params
            self.pi = pi_rows(data, self.eta)
        elif pi_source == "true_params":
            self.eta = eta
            self.pi = np.ones(data.n) if eta is None else pi_rows(data, eta)
        elif pi_source == "supplied_weights":
            self.eta = eta
            self.pi = np.asarray(weights, dtype=float)
        else:
            raise ValueError(f"unknown pi source {pi_source!r}")
        check_weights(data, self.pi)

    def at(self, eta_vec=None):
        if eta_vec is None:
            return self.pi
        return pi_rows(self.data, aft.AftParams.from_vector(eta_vec))


def _ipw_rows(data, pi, theta):
    return (data.delta / pi)[:, None] * dataset_scores(data, data.w, theta)


def fit_ipw(data: Dataset, pi_source: str = "fitted", eta: Optional[aft.AftParams] = None,
            weights=None) -> EstimateResult:
    """Inverse probability weighted complete-case score equation.

    Parameters
    ----------
    pi_source : {"true_params", "fitted", "supplied_weights"}
        With ``fitted`` a Weibull AFT censoring model is estimated from the
        data and the sandwich accounts for that estimation.
    eta : AftParams, optional
        Censoring model for ``true_params``.
    weights : array_like, optional
        Observation probabilities for ``supplied_weights``.
    """
    probs = _Probabilities(data, pi_source, eta, weights)
    pi = probs.pi
    wts = data.delta / pi
    theta = weighted_least_squares(data, data.w, wts)
    bread = np.einsum("i,ijk->jk", wts, score_jacobian_rows(data, data.w, theta)) / data.n
    return finish("ipw", data, theta, lambda th: _ipw_rows(data, pi, th), bread=bread,
                  nuisance=probs.nuisance,
                  rows_fn_nuisance=lambda th, e: _ipw_rows(data, probs.at(e), th),
                  n_used=int(data.delta.sum()), metadata={"pi_source": pi_source})


def lambda_matrix(data: Dataset, theta, psi, pi=None, eta: Optional[aft.AftParams] = None,
                  eta_fit: Optional[Nuisance] = None) -> np.ndarray:
    """Variance-minimising matrix for the augmentation ``(1 - delta/pi) Psi``.

    Computes ``-E[F G^T] E[G G^T]^-1`` with sample means, where
    ``F = delta S / pi`` and ``G = (1 - delta / pi) Psi``. When the
    censoring model was estimated (``eta_fit``), both F and G are first
    corrected for that estimation by subtracting ``D M^-1 U_i`` with ``U_i``
    the AFT score rows, ``M`` their mean derivative and ``D`` the
    finite-difference derivative of the mean of F (resp. G) in the AFT
    parameters.

    Parameters
    ----------
    theta : array_like
        Outcome parameters at which the IPW rows are evaluated.
    psi : array_like
        (n, p) augmentation function per row.
    pi : array_like, optional
        Observation probabilities; computed from ``eta`` or ``eta_fit`` if absent.
    """
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if eta_fit is not None:
        eta = eta_fit.params
    if pi is None:
        pi = np.ones(data.n) if eta is None else pi_rows(data, eta)
    base = _ipw_rows(data, pi, theta)
    aug = (1.0 - data.delta / pi)[:, None] * psi
    if eta_fit is not None:
        def pi_at(e):
            return pi_rows(data, aft.AftParams.from_vector(e))

        d_base = finite_diff_jacobian(lambda e: _ipw_rows(data, pi_at(e), theta).mean(axis=0),
                                      eta_fit.vector, NUISANCE_FD_STEP)
        d_aug = finite_diff_jacobian(
            lambda e: ((1.0 - data.delta / pi_at(e))[:, None] * psi).mean(axis=0),
            eta_fit.vector, NUISANCE_FD_STEP)
        upsilon = np.linalg.solve(eta_fit.mean_jacobian(), eta_fit.score_rows().T).T
        base = base - upsilon @ d_base.T
        aug = aug - upsilon @ d_aug.T
    return projection_matrix(base, aug)


def fit_aipw(data: Dataset, config: AipwConfig, solver: SolverConfig = DEFAULT_SOLVER
             ) -> EstimateResult:
    """Augmented inverse probability weighted estimator.

    Solves ``sum_i [delta_i S_i / pi_i + (1 - delta_i / pi_i) Psi_i] = 0``
    starting from the IPW estimate. For ``closed_with_lambda`` the matrix is
    computed once at the IPW estimate and then held fixed.
    """
    probs = _Probabilities(data, config.pi_source, config.eta, config.weights)
    pi = probs.pi
    pilot = weighted_least_squares(data, data.w, data.delta / pi)
    meta = {"pi_source": config.pi_source, "augmentation": config.augmentation}
    active = (1.0 - data.delta / pi) != 0
    if config.augmentation == "none" or not active.any():
        return fit_ipw(data, config.pi_source, config.eta, config.weights)

    cond = ConditionalX(data, config.x_given_z, rows=active, rule=config.quadrature)
    eff = config.augmentation == "eff"
    if eff:
        if probs.eta is None:
            raise DataError("the efficient augmentation needs a censoring model")
        tilt = efficient_tilt(cond, probs.eta)

    def psi_rows(theta, eta_vec=None):
        if eff:
            t = tilt if eta_vec is None else efficient_tilt(
                cond, aft.AftParams.from_vector(eta_vec))
            vals = cond.efficient_score(theta, t)
        else:
            vals = cond.expected_score(theta)
        out = np.zeros((data.n, theta.size))
        out[active] = vals
        return out

    lam = None
    if config.augmentation == "closed_with_lambda":
        lam = lambda_matrix(data, pilot, psi_rows(pilot), pi=pi, eta=probs.eta,
                            eta_fit=probs.nuisance)
        meta["lambda_matrix"] = lam

    def rows_at(theta, eta_vec=None):
        p = probs.at(eta_vec)
        psi = psi_rows(theta, eta_vec)
        if lam is not None:
            psi = psi @ lam.T
        return _ipw_rows(data, p, theta) + (1.0 - data.delta / p)[:, None] * psi

    theta = solve_mean(rows_at, pilot, solver)
    estimator_id = {"eff": "aipw_eff", "closed": "aipw_closed",
                    "closed_with_lambda": "aipw_lambda"}[config.augmentation]
    return finish(estimator_id, data, theta, rows_at, nuisance=probs.nuisance,
                  rows_fn_nuisance=rows_at, metadata=meta, solver=solver)
