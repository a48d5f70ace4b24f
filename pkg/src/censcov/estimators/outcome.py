"""Outcome-model scores, selection probabilities and conditional expectations.

The conditional density of the censored covariate given the outcome,

    f(x | y, z)  proportional to  f(y | x, z; theta) * f(x | z; gamma),

is represented on a quadrature grid per row (:class:`ConditionalX`). All
augmentation functions and the likelihood-based terms are expectations over
that grid.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .. import weibull_aft as aft
from ..errors import DegenerateDesign, ExtremeWeights, QuadratureFailure, UnstableDenominator
from ..numeric import COND_LIMIT, DEFAULT_RULE, QuadratureRule
from .data import Dataset, ThetaParams

PI_FLOOR = 1e-4
WEIGHT_CAP = 1.0 / PI_FLOOR
LOG_TINY = np.log(1e-300)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _split(theta):
    vec = theta.to_vector() if isinstance(theta, ThetaParams) else np.asarray(theta, float)
    return vec[0], vec[1], vec[2:-1], vec[-1]


def score_values(eps, t, z, sigma):
    """Stack ``(eps, t eps, z eps) / sigma^2`` and ``-1/sigma + eps^2/sigma^3``.

    ``eps`` and ``t`` share a shape ``S``; ``z`` has shape ``S + (q,)`` or
    broadcasts to it. Returns an array of shape ``S + (q + 3,)``.
    """
    eps = np.asarray(eps, dtype=float)
    s2 = sigma * sigma
    mean_part = eps / s2
    zpart = np.asarray(z, dtype=float) * mean_part[..., None]
    return np.concatenate([mean_part[..., None], (t * mean_part)[..., None], zpart,
                           (-1.0 / sigma + eps * eps / (s2 * sigma))[..., None]], axis=-1)


def score_theta(y, x, z, theta):
    """Score of the normal linear model ``log f(y | x, z; theta)`` in theta.

    Parameters
    ----------
    y, x : float or array_like
        Outcome and regressor value (for the anchored design pass ``anchor - x``).
    z : array_like
        Covariate vector (or matrix with one row per ``y``).
    theta : ThetaParams or array_like
        ``(beta0, beta_x, beta_z..., sigma)``.

    Examples
    --------
    >>> score_theta(3.0, 1.0, [1.0], ThetaParams(1.0, 1.0, (1.0,), 1.0))
    array([ 0.,  0.,  0., -1.])
    """
    b0, bx, bz, sigma = _split(theta)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float).reshape(y.shape + (bz.size,))
    eps = y - b0 - bx * x - z @ bz
    return score_values(eps, x, z, sigma)


def dataset_scores(data: Dataset, x, theta) -> np.ndarray:
    """Per-row scores with covariate values ``x`` (n, p)."""
    t = data.regressor(x)
    b0, bx, bz, sigma = _split(theta)
    eps = data.y - b0 - bx * t - data.z @ bz
    return score_values(eps, t, data.z, sigma)


def score_jacobian_rows(data: Dataset, x, theta) -> np.ndarray:
    """Analytic derivative of each row's score in theta, shape (n, p, p)."""
    t = data.regressor(x)
    b0, bx, bz, sigma = _split(theta)
    eps = data.y - b0 - bx * t - data.z @ bz
    u = np.column_stack([np.ones_like(t), t, data.z])
    k = u.shape[1]
    jac = np.empty((data.n, k + 1, k + 1))
    jac[:, :k, :k] = -u[:, :, None] * u[:, None, :] / sigma**2
    cross = -2.0 * u * (eps / sigma**3)[:, None]
    jac[:, :k, k] = cross
    jac[:, k, :k] = cross
    jac[:, k, k] = 1.0 / sigma**2 - 3.0 * eps**2 / sigma**4
    return jac


def weighted_least_squares(data: Dataset, x, weights) -> np.ndarray:
    """Root of ``sum_i weights_i * score_i = 0`` in closed form.

    Coefficients are weighted least squares and ``sigma^2`` is the weighted
    mean squared residual.
    """
    t = data.regressor(x)
    u = np.column_stack([np.ones(data.n), t, data.z])
    wts = np.asarray(weights, dtype=float)
    keep = wts != 0
    uk, yk, wk = u[keep], data.y[keep], wts[keep]
    gram = (uk * wk[:, None]).T @ uk
    cond = np.linalg.cond(gram) if gram.size else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateDesign("outcome-model design matrix is rank deficient")
    beta = np.linalg.solve(gram, (uk * wk[:, None]).T @ yk)
    resid = yk - uk @ beta
    sigma = np.sqrt(np.sum(wk * resid**2) / np.sum(wk))
    if not sigma > 0:
        raise DegenerateDesign("residual variance is zero")
    return np.append(beta, sigma)


# -- selection probabilities ---------------------------------------------

def censoring_regressors(y, z) -> np.ndarray:
    """Regressors ``(y, z)`` of the censoring-time model."""
    return np.column_stack([np.asarray(y, dtype=float), np.asarray(z, dtype=float)])


def compute_pi(obs, eta: aft.AftParams) -> float:
    """Probability that the covariate is observed, ``P(C >= w | y, z)``."""
    row = np.concatenate([[obs.y], np.atleast_1d(np.asarray(obs.z, dtype=float))])
    return aft.survival_prob(obs.w, row, eta)


def pi_rows(data: Dataset, eta: aft.AftParams) -> np.ndarray:
    """Selection probability at each row's observed value."""
    return np.exp(-aft.cumulative_hazard(data.w, censoring_regressors(data.y, data.z), eta))


def check_weights(data: Dataset, pi: np.ndarray) -> np.ndarray:
    """Validate probabilities used as inverse weights on uncensored rows."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (data.n,):
        raise ValueError("one probability per row is required")
    used = data.delta == 1
    if np.any(~np.isfinite(pi[used])) or np.any(pi[used] > 1):
        raise ExtremeWeights("selection probabilities must lie in (0, 1]")
    if np.any(pi[used] < PI_FLOOR):
        worst = float(1.0 / pi[used].min()) if pi[used].min() > 0 else np.inf
        raise ExtremeWeights(f"inverse weight {worst:.3g} exceeds the cap {WEIGHT_CAP:.0f}")
    return pi


def _log_expm1(h):
    h = np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        big = h > 30.0
        out = np.empty_like(h)
        out[big] = h[big] + np.log1p(-np.exp(-h[big]))
        out[~big] = np.log(np.expm1(h[~big]))
    return out


# -- conditional distribution of the censored covariate ---------------------

class ConditionalX:
    """Quadrature grid for ``f(x | y, z)`` on a subset of rows.

    Parameters
    ----------
    data : Dataset
    gamma : AftParams
        Weibull AFT parameters of ``f(x | z)``.
    rows : array_like of bool or int, optional
        Rows to represent (default all).
    truncate : bool
        If true, the support of row i is ``(w_i, inf)`` instead of ``(0, inf)``.
    rule : QuadratureRule
        Semi-infinite rule; node spacing is scaled per row by the Weibull
        scale of ``f(x | z)``.
    """

    def __init__(self, data: Dataset, gamma: aft.AftParams, rows=None, truncate=False,
                 rule: QuadratureRule = DEFAULT_RULE):
        idx = np.arange(data.n) if rows is None else np.arange(data.n)[rows]
        self.index = idx
        self.y = data.y[idx]
        self.z = data.z[idx]
        self.gamma = gamma
        scale = aft.weibull_scale(self.z, gamma)
        lower = data.w[idx] if truncate else np.zeros(idx.size)
        x, qw = rule.semi_infinite_nodes(lower, scale)
        self.x = x
        self.t = x if data.anchor is None else data.anchor[idx][:, None] - x
        with np.errstate(divide="ignore"):
            self.base = np.log(qw) + aft.log_density(x, self.z, gamma)

    @property
    def size(self) -> int:
        return self.index.size

    def log_weights(self, theta):
        """Unnormalised log weights and per-row log normalising constant."""
        b0, bx, bz, sigma = _split(theta)
        resid = self.y - b0 - self.z @ bz
        eps = resid[:, None] - bx * self.t
        lw = self.base - 0.5 * (eps / sigma) ** 2
        lognorm = logsumexp(lw, axis=1) - np.log(sigma) - _HALF_LOG_2PI
        if np.any(~np.isfinite(lognorm)) or np.any(lognorm < LOG_TINY):
            raise QuadratureFailure("conditional density normaliser underflows")
        return lw, lognorm

    def _expected_score(self, theta, lw):
        b0, bx, bz, sigma = _split(theta)
        top = lw.max(axis=1, keepdims=True)
        p = np.exp(lw - top)
        p /= p.sum(axis=1, keepdims=True)
        et = np.sum(p * self.t, axis=1)
        et2 = np.sum(p * self.t * self.t, axis=1)
        r = self.y - b0 - self.z @ bz
        e_eps = r - bx * et
        e_teps = r * et - bx * et2
        e_eps2 = r * r - 2.0 * r * bx * et + bx * bx * et2
        s2 = sigma * sigma
        return np.column_stack([e_eps / s2, e_teps / s2, self.z * (e_eps / s2)[:, None],
                                -1.0 / sigma + e_eps2 / (s2 * sigma)])

    def expected_score(self, theta) -> np.ndarray:
        """``E[S(y, X, z; theta) | y, z]`` for each row, shape (m, p)."""
        lw, _ = self.log_weights(theta)
        return self._expected_score(theta, lw)

    def expected_x(self, theta) -> np.ndarray:
        """Conditional mean of the covariate for each row."""
        lw, _ = self.log_weights(theta)
        top = lw.max(axis=1, keepdims=True)
        p = np.exp(lw - top)
        return np.sum(p * self.x, axis=1) / p.sum(axis=1)

    def censoring_hazard(self, eta: aft.AftParams) -> np.ndarray:
        """Cumulative hazard of the censoring time at each node."""
        reg = censoring_regressors(self.y, self.z)
        return aft.cumulative_hazard(self.x, reg, eta)

    def efficient_score(self, theta, log_tilt) -> np.ndarray:
        """``E[(1 - 1/pi) S] / E[1 - 1/pi]`` given ``log(1/pi - 1)`` at the nodes."""
        lw, _ = self.log_weights(theta)
        tilted = lw + log_tilt
        log_den = logsumexp(tilted, axis=1) - logsumexp(lw, axis=1)
        if np.any(~(log_den > np.log(1e-10))):
            raise UnstableDenominator(
                "expected augmentation weight is numerically zero for some rows")
        return self._expected_score(theta, tilted)

    def observation_probability(self, theta, hazard) -> np.ndarray:
        """``E[pi(y, X, z) | y, z]`` given the censoring cumulative hazard at the nodes."""
        lw, _ = self.log_weights(theta)
        return np.exp(logsumexp(lw - hazard, axis=1) - logsumexp(lw, axis=1))


def psi_closed(y, z, theta, gamma: aft.AftParams, rule: QuadratureRule = DEFAULT_RULE,
               anchor=None) -> np.ndarray:
    """``E[S(y, X, z; theta) | y, z]`` under ``f(x | y, z)``.

    Vectorised over ``y`` (scalar or length-m) with ``z`` of shape (m, q).
    Returns shape (p,) for scalar ``y`` and (m, p) otherwise.
    """
    data, scalar = _rows_as_dataset(y, z, anchor)
    out = ConditionalX(data, gamma, rule=rule).expected_score(theta)
    return out[0] if scalar else out


def psi_eff(y, z, theta, eta: aft.AftParams, gamma: aft.AftParams,
            rule: QuadratureRule = DEFAULT_RULE, anchor=None) -> np.ndarray:
    """Efficient augmentation ``E[(1 - 1/pi) S | y, z] / E[1 - 1/pi | y, z]``.

    Raises
    ------
    UnstableDenominator
        When ``E[1 - 1/pi | y, z]`` is within 1e-10 of zero.
    """
    data, scalar = _rows_as_dataset(y, z, anchor)
    cond = ConditionalX(data, gamma, rule=rule)
    out = cond.efficient_score(theta, _log_expm1(cond.censoring_hazard(eta)))
    return out[0] if scalar else out


def efficient_tilt(cond: ConditionalX, eta: aft.AftParams) -> np.ndarray:
    """``log(1/pi - 1)`` at the grid nodes of ``cond``."""
    return _log_expm1(cond.censoring_hazard(eta))


def _rows_as_dataset(y, z, anchor):
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.asarray(z, dtype=float)
    z = z.reshape(y.size, -1) if z.size else np.zeros((y.size, 0))
    anc = None if anchor is None else np.broadcast_to(np.asarray(anchor, float), y.shape)
    # w is irrelevant for untruncated grids; any positive value will do
    return Dataset(y, np.ones_like(y), np.ones_like(y), z, anc), scalar
