"""Weibull accelerated failure time models.

A time T follows ``log T = m + s * e`` where ``m = b0 + x^T b`` and ``e`` has
the standard minimum-Gumbel distribution. Equivalently T is Weibull with
scale ``exp(m)`` and shape ``1 / s``. Everything is computed on the log-time
scale, with ``s`` parametrised by ``log_scale`` so the optimisation is
unconstrained.

Regressor matrices passed to this module never contain the intercept column;
it is prepended internally and is always ``coefficients[0]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import AllCensored, DataError, DegenerateDesign, NonConvergence
from .numeric import COND_LIMIT

MIN_EVENTS = 5
# a Gumbel scale this small means the likelihood is running off to a spike
MIN_LOG_SCALE = np.log(1e-8)
MAX_LOG_SCALE = np.log(1e8)


@dataclass(frozen=True)
class AftParams:
    """Weibull AFT parameters.

    Attributes
    ----------
    coefficients : numpy.ndarray
        Intercept followed by one coefficient per regressor.
    log_scale : float
        Log of the Gumbel scale; the Weibull shape is ``exp(-log_scale)``.
    """

    coefficients: np.ndarray
    log_scale: float

    def __post_init__(self):
        coef = np.atleast_1d(np.asarray(self.coefficients, dtype=float)).copy()
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "log_scale", float(self.log_scale))
        if not (np.all(np.isfinite(coef)) and np.isfinite(self.log_scale)):
            raise ValueError("AFT parameters must be finite")

    @classmethod
    def from_vector(cls, vec) -> "AftParams":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1], vec[-1])

    @classmethod
    def from_shape(cls, coefficients, shape: float) -> "AftParams":
        """Build parameters from Weibull log-scale coefficients and shape."""
        return cls(coefficients, -np.log(shape))

    @property
    def scale(self) -> float:
        """Gumbel scale on the log-time axis."""
        return float(np.exp(self.log_scale))

    @property
    def shape(self) -> float:
        """Weibull shape parameter."""
        return float(np.exp(-self.log_scale))

    @property
    def n_params(self) -> int:
        return self.coefficients.size + 1

    def to_vector(self) -> np.ndarray:
        return np.append(self.coefficients, self.log_scale)


@dataclass(frozen=True)
class AftFit:
    """Result of :func:`fit_aft`."""

    params: AftParams
    covariance: np.ndarray
    converged: bool
    loglik: float
    n_events: int = 0
    iterations: int = 0
    info: dict = field(default_factory=dict, compare=False)


def design(regressors, n=None) -> np.ndarray:
    """Prepend an intercept column to a regressor matrix."""
    if regressors is None:
        return np.ones((n, 1))
    reg = np.asarray(regressors, dtype=float)
    if reg.ndim == 1:
        if n is not None and reg.size == n and n != 1:
            reg = reg[:, None]
        else:
            reg = reg[None, :]
    return np.column_stack([np.ones(reg.shape[0]), reg])


def linear_predictor(regressors, params: AftParams) -> np.ndarray:
    """Location ``m`` on the log-time scale for each regressor row."""
    coef = params.coefficients
    q = coef.size - 1
    if regressors is None:
        return coef[0]
    reg = np.asarray(regressors, dtype=float)
    if reg.ndim == 2:
        return coef[0] + reg @ coef[1:]
    if q == 0:
        # a single empty row, or nothing to multiply
        return coef[0] if reg.size == 0 else np.full(reg.shape, coef[0])
    if reg.size == q:
        return coef[0] + float(reg @ coef[1:])
    if q == 1:
        return coef[0] + reg * coef[1]
    raise ValueError("regressor row length does not match the coefficients")


def weibull_scale(regressors, params: AftParams) -> np.ndarray:
    """Weibull scale ``exp(m)`` on the time axis."""
    return np.exp(linear_predictor(regressors, params))


def cumulative_hazard(t, regressors, params: AftParams) -> np.ndarray:
    """``(t / exp(m)) ** shape``, broadcasting ``t`` against the rows."""
    m = linear_predictor(regressors, params)
    t = np.asarray(t, dtype=float)
    if t.ndim > np.ndim(m):
        m = np.reshape(m, np.shape(m) + (1,) * (t.ndim - np.ndim(m)))
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp((np.log(t) - m) / params.scale)


def survival_prob(t, regressor_row, params: AftParams):
    """Weibull survival ``exp(-(t / exp(m)) ** shape)``.

    Examples
    --------
    >>> survival_prob(1.0, [], AftParams([0.0], 0.0))
    0.36787944117144233
    """
    out = np.exp(-cumulative_hazard(t, regressor_row, params))
    return float(out) if np.ndim(out) == 0 else out


def log_density(t, regressor_row, params: AftParams):
    """Log Weibull density at ``t`` on the original time scale."""
    m = linear_predictor(regressor_row, params)
    t = np.asarray(t, dtype=float)
    if t.ndim > np.ndim(m):
        m = np.reshape(m, np.shape(m) + (1,) * (t.ndim - np.ndim(m)))
    with np.errstate(divide="ignore", over="ignore"):
        log_t = np.log(t)
        e = (log_t - m) / params.scale
        out = -params.log_scale + e - np.exp(e) - log_t
    return float(out) if np.ndim(out) == 0 else out


def weibull_mean(regressors, params: AftParams) -> np.ndarray:
    """Mean ``exp(m) * Gamma(1 + scale)`` of the fitted distribution."""
    return weibull_scale(regressors, params) * gamma_fn(1.0 + params.scale)


def sample(rng: np.random.Generator, regressors, params: AftParams) -> np.ndarray:
    """Draw one Weibull time per regressor row."""
    scale = weibull_scale(regressors, params)
    return scale * rng.standard_exponential(np.shape(scale)) ** params.scale


def _standardised(times, status, regressors, params):
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=float)
    dm = design(regressors, times.size)
    e = (np.log(times) - dm @ params.coefficients) / params.scale
    return times, status, dm, e


def loglik(times, status, regressors, params: AftParams) -> float:
    """Censored Weibull log-likelihood on the time scale."""
    times, status, dm, e = _standardised(times, status, regressors, params)
    with np.errstate(over="ignore"):
        ee = np.exp(e)
    return float(np.sum(status * (-params.log_scale + e - np.log(times)) - ee))


def score_rows(times, status, regressors, params: AftParams) -> np.ndarray:
    """Per-observation score contributions, shape (n, p + 1).

    For coefficients the contribution is ``x (exp(e) - delta) / s`` and for
    ``log s`` it is ``-delta (1 + e) + e exp(e)``, where ``e`` is the
    standardised log-time residual.
    """
    _, status, dm, e = _standardised(times, status, regressors, params)
    ee = np.exp(e)
    coef_part = dm * ((ee - status) / params.scale)[:, None]
    scale_part = -status * (1.0 + e) + e * ee
    return np.column_stack([coef_part, scale_part])


def score_aft(times, status, regressors, params: AftParams) -> np.ndarray:
    """Score of the censored log-likelihood summed over observations."""
    return score_rows(times, status, regressors, params).sum(axis=0)


def hessian_aft(times, status, regressors, params: AftParams) -> np.ndarray:
    """Analytic Hessian of :func:`loglik` in ``(coefficients, log_scale)``."""
    _, status, dm, e = _standardised(times, status, regressors, params)
    ee = np.exp(e)
    s = params.scale
    p = dm.shape[1]
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = -(dm * (ee / s**2)[:, None]).T @ dm
    cross = -(dm * ((ee - status + e * ee) / s)[:, None]).sum(axis=0)
    hess[:p, p] = cross
    hess[p, :p] = cross
    hess[p, p] = np.sum(status * e - e * ee - e**2 * ee)
    return hess


def fit_aft(times, status, regressors=None, max_iterations: int = 100,
            tolerance: float = 1e-6) -> AftFit:
    """Maximum likelihood fit of a Weibull AFT model with right censoring.

    Parameters
    ----------
    times : array_like
        Positive observed times.
    status : array_like
        1 if the event was observed at the time, 0 if right-censored.
    regressors : array_like, optional
        (n, q) regressor matrix without an intercept column.
    max_iterations : int
        Newton iteration cap.
    tolerance : float
        Convergence threshold on the sup-norm of the summed score.

    Returns
    -------
    AftFit
        Parameters, inverse observed information, log-likelihood.

    Raises
    ------
    AllCensored
        Fewer than five events.
    DegenerateDesign
        Rank-deficient design matrix.
    NonConvergence
        Iteration cap reached or the scale collapses toward zero.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=float)
    if times.ndim != 1 or status.shape != times.shape:
        raise DataError("times and status must be 1-d arrays of equal length")
    if not np.all(np.isfinite(times)) or np.any(times <= 0):
        raise DataError("survival times must be positive and finite")
    if not np.all(np.isin(status, (0.0, 1.0))):
        raise DataError("status values must be 0 or 1")
    dm = design(regressors, times.size)
    if dm.shape[0] != times.size:
        raise DataError("regressor rows do not match the number of times")
    reg = dm[:, 1:]
    n_events = int(status.sum())
    if n_events < MIN_EVENTS:
        raise AllCensored(f"only {n_events} events; at least {MIN_EVENTS} are required")
    if np.linalg.matrix_rank(dm) < dm.shape[1]:
        raise DegenerateDesign("AFT regressor matrix is rank deficient")

    start = np.zeros(dm.shape[1] + 1)
    start[0] = np.log(times.mean())
    vec = start
    ll = loglik(times, status, reg, AftParams.from_vector(vec))
    for it in range(1, max_iterations + 1):
        params = AftParams.from_vector(vec)
        grad = score_aft(times, status, reg, params)
        if np.max(np.abs(grad)) <= tolerance:
            return _finish(times, status, reg, params, ll, n_events, it - 1)
        hess = hessian_aft(times, status, reg, params)
        direction = _ascent_direction(hess, grad)
        lam = 1.0
        for _ in range(60):
            trial = vec + lam * direction
            if not MIN_LOG_SCALE <= trial[-1] <= MAX_LOG_SCALE:
                lam *= 0.5
                continue
            ll_trial = loglik(times, status, reg, AftParams.from_vector(trial))
            if np.isfinite(ll_trial) and ll_trial >= ll - 1e-12 * abs(ll):
                break
            lam *= 0.5
        else:
            if vec[-1] < MIN_LOG_SCALE + 5:
                raise NonConvergence("Weibull scale collapsed toward zero")
            raise NonConvergence("AFT line search failed")
        vec, ll = trial, ll_trial
        if vec[-1] < MIN_LOG_SCALE + 1:
            raise NonConvergence("Weibull scale collapsed toward zero")
    raise NonConvergence(f"AFT fit did not converge in {max_iterations} iterations")


def _ascent_direction(hess, grad):
    """Newton direction, regularised until it is an ascent direction."""
    neg = -hess
    mu = 0.0
    eye = np.eye(grad.size)
    for _ in range(40):
        try:
            chol = np.linalg.cholesky(neg + mu * eye)
        except np.linalg.LinAlgError:
            mu = max(2 * mu, 1e-6 * max(1.0, np.abs(np.diag(neg)).max()))
            continue
        return np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
    return grad / max(1.0, np.linalg.norm(grad))


def _finish(times, status, reg, params, ll, n_events, iterations):
    info = -hessian_aft(times, status, reg, params)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NonConvergence("observed information is singular at the AFT optimum")
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return AftFit(params=params, covariance=cov, converged=True, loglik=ll,
                  n_events=n_events, iterations=iterations)
