"""Machinery shared by the estimators: nuisance fits, projections, result assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import weibull_aft as aft
from ..errors import QuadratureFailure, SingularMoment, UnstableDenominator
from ..numeric import COND_LIMIT, SolverConfig, finite_diff_jacobian, solve_estimating_equation
from ..variance import sandwich_nuisance_corrected, sandwich_plain
from .data import Dataset, EstimateResult, ThetaParams
from .outcome import censoring_regressors

NUISANCE_FD_STEP = 1e-5
INCONSISTENT = "inconsistent_under_outcome_dependent_censoring"
DEFAULT_SOLVER = SolverConfig()


@dataclass(frozen=True)
class Nuisance:
    """A fitted Weibull AFT nuisance model together with its score rows."""

    fit: aft.AftFit
    times: np.ndarray
    status: np.ndarray
    regressors: np.ndarray

    @property
    def params(self) -> aft.AftParams:
        return self.fit.params

    @property
    def vector(self) -> np.ndarray:
        return self.fit.params.to_vector()

    def score_rows(self) -> np.ndarray:
        return aft.score_rows(self.times, self.status, self.regressors, self.params)

    def mean_jacobian(self) -> np.ndarray:
        return aft.hessian_aft(self.times, self.status, self.regressors,
                               self.params) / self.times.size


def fit_censoring_model(data: Dataset) -> Nuisance:
    """Weibull AFT for the censoring time given ``(y, z)``.

    Censoring is the event here: rows with ``delta = 0`` are observed
    censoring times and rows with ``delta = 1`` are right-censored at ``w``.
    """
    reg = censoring_regressors(data.y, data.z)
    status = 1.0 - data.delta
    return Nuisance(aft.fit_aft(data.w, status, reg), data.w, status, reg)


def fit_covariate_model(data: Dataset) -> Nuisance:
    """Weibull AFT for the censored covariate given ``z``.

    The fit treats ``(w, delta)`` as ordinary right-censored data, which
    ignores the dependence of censoring on the outcome.
    """
    return Nuisance(aft.fit_aft(data.w, data.delta, data.z), data.w, data.delta, data.z)


def projection_matrix(base_rows, aug_rows) -> np.ndarray:
    """``-E[F G^T] E[G G^T]^-1`` from per-row samples of F and G."""
    base_rows = np.asarray(base_rows, dtype=float)
    aug_rows = np.asarray(aug_rows, dtype=float)
    n = base_rows.shape[0]
    cross = base_rows.T @ aug_rows / n
    second = aug_rows.T @ aug_rows / n
    cond = np.linalg.cond(second)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMoment(f"augmentation second moment is singular (condition {cond:.3g})")
    return -np.linalg.solve(second.T, cross.T).T


def solve_mean(rows_fn: Callable, start, solver: SolverConfig = DEFAULT_SOLVER) -> np.ndarray:
    """Root of the mean estimating function.

    Points with non-positive sigma, or where a quadrature cannot be formed,
    are reported to the solver as non-finite so that its line search
    backs off from them.
    """
    def mean_fn(theta):
        if not theta[-1] > 0:
            return np.full(theta.size, np.nan)
        try:
            return rows_fn(theta).mean(axis=0)
        except (QuadratureFailure, UnstableDenominator):
            return np.full(theta.size, np.nan)

    return solve_estimating_equation(mean_fn, start, solver)


def finish(estimator_id: str, data: Dataset, theta_vec, rows_fn: Callable, *,
           bread=None, nuisance: Optional[Nuisance] = None,
           rows_fn_nuisance: Optional[Callable] = None, n_used: Optional[int] = None,
           inconsistent: bool = False, nuisance_fit=None, metadata: Optional[dict] = None,
           solver: SolverConfig = DEFAULT_SOLVER) -> EstimateResult:
    """Assemble an :class:`EstimateResult` with a sandwich covariance.

    ``rows_fn(theta)`` returns the (n, p) estimating-function rows. When a
    nuisance is supplied, ``rows_fn_nuisance(theta, nuisance_vector)`` gives
    the same rows at other nuisance values and the corrected sandwich is used.
    """
    theta_vec = np.asarray(theta_vec, dtype=float)
    rows = rows_fn(theta_vec)
    if bread is None:
        bread = finite_diff_jacobian(lambda th: rows_fn(th).mean(axis=0), theta_vec,
                                     solver.fd_step)
    if nuisance is not None:
        d_eta = finite_diff_jacobian(lambda e: rows_fn_nuisance(theta_vec, e).mean(axis=0),
                                     nuisance.vector, NUISANCE_FD_STEP)
        parts = sandwich_nuisance_corrected(rows, nuisance.score_rows(), bread, d_eta,
                                            nuisance.mean_jacobian())
        nuisance_fit = nuisance.fit if nuisance_fit is None else nuisance_fit
    else:
        parts = sandwich_plain(rows, bread)
    meta = {INCONSISTENT: bool(inconsistent),
            "variance": "nuisance_corrected" if nuisance is not None else "plain",
            "max_abs_estimating_function": float(np.max(np.abs(rows.mean(axis=0))))}
    if metadata:
        meta.update(metadata)
    return EstimateResult(
        estimator_id=estimator_id,
        theta=ThetaParams.from_vector(theta_vec),
        covariance=parts.covariance,
        std_errors=parts.std_errors,
        converged=True,
        n_used=data.n if n_used is None else int(n_used),
        nuisance_fit=nuisance_fit,
        metadata=meta,
    )
