"""Data containers for the outcome model and fitted results."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import DataError


@dataclass(frozen=True)
class Observation:
    """One subject.

    ``w = min(x, c)`` is the observed value of the censored covariate and
    ``delta = 1`` when it is uncensored. ``anchor`` is an optional known
    per-subject offset: when present the regressor entering the outcome
    model is ``anchor - x`` instead of ``x``.
    """

    y: float
    w: float
    delta: int
    z: tuple = ()
    anchor: Optional[float] = None
    latent_x: Optional[float] = None
    latent_c: Optional[float] = None


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample of :class:`Observation` rows.

    Attributes
    ----------
    y, w, delta : numpy.ndarray
        Outcome, observed covariate value ``min(X, C)`` and event indicator.
    z : numpy.ndarray
        (n, q) fully observed covariates.
    anchor : numpy.ndarray or None
        Known offsets; the outcome regressor is ``anchor - x`` when given.
    latent_x, latent_c : numpy.ndarray or None
        True covariate and censoring values, available for simulated data.
    """

    y: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    anchor: Optional[np.ndarray] = None
    latent_x: Optional[np.ndarray] = None
    latent_c: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _frozen(self.y)
        n = y.size
        w = _frozen(self.w)
        delta = _frozen(self.delta)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(n, -1) if z.size else np.zeros((n, 0))
        z = _frozen(z)
        if y.ndim != 1 or w.shape != (n,) or delta.shape != (n,) or z.shape[0] != n:
            raise DataError("dataset columns must have a common length")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
            raise DataError("dataset contains non-finite values")
        if np.any(w <= 0):
            raise DataError("observed covariate values must be positive")
        if not np.all(np.isin(delta, (0.0, 1.0))):
            raise DataError("event indicators must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "z", z)
        for name in ("anchor", "latent_x", "latent_c"):
            val = getattr(self, name)
            if val is not None:
                val = _frozen(val)
                if val.shape != (n,) or not np.all(np.isfinite(val)):
                    raise DataError(f"{name} must be a finite column of length {n}")
                object.__setattr__(self, name, val)
        if self.latent_x is not None and self.latent_c is not None:
            if not (np.array_equal(w, np.minimum(self.latent_x, self.latent_c))
                    and np.array_equal(delta, (self.latent_x <= self.latent_c).astype(float))):
                raise DataError("latent values disagree with (w, delta)")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_z(self) -> int:
        return self.z.shape[1]

    @property
    def censoring_rate(self) -> float:
        return float(1.0 - self.delta.mean())

    def regressor(self, x):
        """Outcome-model regressor for covariate values ``x``.

        ``x`` may carry extra trailing axes (e.g. quadrature nodes).
        """
        if self.anchor is None:
            return np.asarray(x, dtype=float)
        x = np.asarray(x, dtype=float)
        anchor = self.anchor.reshape(self.anchor.shape + (1,) * (x.ndim - 1))
        return anchor - x

    def subset(self, mask) -> "Dataset":
        """Rows selected by a boolean mask or index array."""
        def pick(a):
            return None if a is None else a[mask]
        return Dataset(self.y[mask], self.w[mask], self.delta[mask], self.z[mask],
                       pick(self.anchor), pick(self.latent_x), pick(self.latent_c))

    def with_w(self, w) -> "Dataset":
        """Copy with the observed covariate replaced, dropping latent values."""
        return replace(self, w=w, latent_x=None, latent_c=None)

    def row(self, i) -> Observation:
        def get(a):
            return None if a is None else float(a[i])
        return Observation(float(self.y[i]), float(self.w[i]), int(self.delta[i]),
                           tuple(self.z[i]), get(self.anchor), get(self.latent_x),
                           get(self.latent_c))

    @classmethod
    def from_observations(cls, rows) -> "Dataset":
        rows = list(rows)
        if not rows:
            raise DataError("no observations")

        def column(name):
            vals = [getattr(r, name) for r in rows]
            if all(v is None for v in vals):
                return None
            if any(v is None for v in vals):
                raise DataError(f"{name} must be given for every row or none")
            return np.array(vals, dtype=float)

        z = np.array([r.z for r in rows], dtype=float).reshape(len(rows), -1)
        return cls(column("y"), column("w"), column("delta"), z, column("anchor"),
                   column("latent_x"), column("latent_c"))


@dataclass(frozen=True)
class ThetaParams:
    """Outcome model ``Y = beta0 + beta_x * T + beta_z' Z + eps``, ``eps ~ N(0, sigma^2)``."""

    beta0: float
    beta_x: float
    beta_z: tuple = ()
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta_z", tuple(float(b) for b in np.atleast_1d(self.beta_z)))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def n_params(self) -> int:
        return 3 + len(self.beta_z)

    def to_vector(self) -> np.ndarray:
        return np.array([self.beta0, self.beta_x, *self.beta_z, self.sigma])

    @classmethod
    def from_vector(cls, vec) -> "ThetaParams":
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), float(vec[1]), tuple(vec[2:-1]), float(vec[-1]))


def coefficient_names(n_z: int) -> list:
    """Names of the entries of a theta vector."""
    if n_z == 1:
        zs = ["beta_z"]
    else:
        zs = [f"beta_z{k + 1}" for k in range(n_z)]
    return ["beta0", "beta_x", *zs, "sigma"]


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with sandwich covariance.

    ``metadata`` carries estimator details such as
    ``inconsistent_under_outcome_dependent_censoring``.
    """

    estimator_id: str
    theta: ThetaParams
    covariance: np.ndarray
    std_errors: np.ndarray
    converged: bool
    n_used: int
    nuisance_fit: object = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def estimate(self) -> np.ndarray:
        return self.theta.to_vector()

    @property
    def inconsistent(self) -> bool:
        return bool(self.metadata.get("inconsistent_under_outcome_dependent_censoring", False))

    def confidence_intervals(self, level: float = 0.95) -> np.ndarray:
        """Wald intervals, one row per parameter."""
        from scipy.stats import norm

        q = norm.ppf(0.5 + level / 2)
        est = self.estimate
        return np.column_stack([est - q * self.std_errors, est + q * self.std_errors])
