"""Monte Carlo harness for the censored-covariate regression study.

Design per replication (defaults in :class:`ScenarioConfig`)::

    Z ~ N(0, 1),  A ~ N(2, 1)
    X ~ Weibull(scale exp(g0 + gz Z), shape 1 / sx)
    Y = b0 + bx (A - X) + bz Z + sigma * N(0, 1)
    C ~ Weibull(scale exp(e0 + ey Y + ez Z), shape 1 / sc)
    W = min(X, C),  delta = 1{X <= C}

The censoring intercept ``e0`` is calibrated to a target censoring rate.
Each replication draws from its own Philox stream keyed by
``(seed, replication)`` so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from . import weibull_aft as aft
from .errors import CensCovError, ConfigError, NoBracket
from .estimators import (AipwConfig, Dataset, ThetaParams, coefficient_names, fit_acc,
                         fit_aipw, fit_cc, fit_censoring_model, fit_cmi, fit_covariate_model,
                         fit_ipw, fit_macc, fit_mle, fit_naive, fit_oracle)

NO_CENSORING_TIME = 1e12
CALIBRATION_ROWS = 200_000
CALIBRATION_BRACKET = (-20.0, 20.0)
SPECIFICATIONS = ("correct", "estimated", "incorrect")

# estimator -> specifications it accepts; "none" marks estimators without nuisance models
ESTIMATORS = {
    "oracle": ("none",),
    "naive": ("none",),
    "cc": ("none",),
    "cmi_y_z": SPECIFICATIONS,
    "cmi_z": SPECIFICATIONS,
    "acc": ("correct", "estimated"),
    "macc": ("correct", "estimated"),
    "ipw": SPECIFICATIONS,
    "aipw_eff": SPECIFICATIONS,
    "aipw_closed": SPECIFICATIONS,
    "aipw_lambda": SPECIFICATIONS,
    "mle": SPECIFICATIONS,
}


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimator together with how its nuisance models are specified."""

    name: str
    specification: str = "none"

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.name!r}")
        if self.specification not in ESTIMATORS[self.name]:
            raise ConfigError(f"estimator {self.name!r} does not accept specification "
                              f"{self.specification!r}")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        name, _, spec = text.strip().partition(":")
        return cls(name.strip(), spec.strip() or "none")

    @property
    def label(self) -> str:
        return self.name if self.specification == "none" else f"{self.name}:{self.specification}"


TABLE2_ESTIMATORS = tuple(EstimatorSpec.parse(s) for s in (
    "oracle", "naive", "cc", "cmi_y_z:correct", "cmi_z:correct", "acc:correct", "macc:correct",
    "ipw:correct", "ipw:estimated", "ipw:incorrect",
    "mle:correct", "mle:estimated", "mle:incorrect",
    "aipw_eff:correct", "aipw_eff:estimated", "aipw_eff:incorrect", "aipw_closed:correct",
    "aipw_lambda:correct", "aipw_lambda:estimated", "aipw_lambda:incorrect",
))

SWEEP_ESTIMATORS = tuple(EstimatorSpec.parse(s) for s in (
    "oracle", "ipw:estimated", "aipw_eff:estimated", "aipw_lambda:estimated", "mle:estimated",
))


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation design.

    ``eta_true`` holds the censoring-model coefficients ``(e0, ey, ez)`` and
    log Gumbel scale. When ``target_censoring`` is set, ``e0`` is replaced by
    the calibrated value; ``eta_intercept=inf`` switches censoring off.
    """

    n: int = 1000
    replications: int = 500
    theta_true: ThetaParams = ThetaParams(1.0, 1.0, (1.0,), 1.0)
    gamma_true: aft.AftParams = aft.AftParams([0.1, 0.1], np.log(0.5))
    eta_true: aft.AftParams = aft.AftParams([0.0, 0.5, 0.5], np.log(1.5))
    target_censoring: Optional[float] = 0.6
    eta_intercept: Optional[float] = None
    estimators: tuple = TABLE2_ESTIMATORS
    seed: int = 20240101
    anchor_mean: float = 2.0
    anchor_sd: float = 1.0
    incorrect_gamma_scale: float = 1.2
    incorrect_pi_range: tuple = (0.1, 0.9)

    def __post_init__(self):
        if self.n < 50:
            raise ConfigError("n must be at least 50")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.target_censoring is None and self.eta_intercept is None:
            raise ConfigError("give either target_censoring or eta_intercept")
        if self.target_censoring is not None and not 0.05 < self.target_censoring < 0.99:
            raise ConfigError("target_censoring must lie in (0.05, 0.99)")
        if len(self.theta_true.beta_z) != 1:
            raise ConfigError("the simulation design has exactly one fully observed covariate")
        lo, hi = self.incorrect_pi_range
        if not 0 < lo < hi <= 1:
            raise ConfigError("incorrect_pi_range must satisfy 0 < low < high <= 1")
        object.__setattr__(self, "estimators",
                           tuple(EstimatorSpec.parse(e) if isinstance(e, str) else e
                                 for e in self.estimators))
        if not self.estimators:
            raise ConfigError("at least one estimator is required")

    def with_eta_intercept(self, value: float) -> "ScenarioConfig":
        return replace(self, eta_intercept=float(value))

    def censoring_params(self) -> Optional[aft.AftParams]:
        """Censoring model with the intercept filled in (``None`` if no censoring)."""
        if self.eta_intercept is None:
            raise ConfigError("censoring intercept has not been calibrated")
        if np.isinf(self.eta_intercept):
            return None
        coef = self.eta_true.coefficients.copy()
        coef[0] = self.eta_intercept
        return aft.AftParams(coef, self.eta_true.log_scale)

    @property
    def incorrect_gamma(self) -> aft.AftParams:
        return aft.AftParams(self.gamma_true.coefficients, np.log(self.incorrect_gamma_scale))


def replication_rng(seed: int, replication: int, stream: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one replication and purpose."""
    ss = np.random.SeedSequence([int(seed), int(replication), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def _draw_uncensored(rng, n, config: ScenarioConfig):
    th = config.theta_true
    z = rng.standard_normal(n)
    a = config.anchor_mean + config.anchor_sd * rng.standard_normal(n)
    x = aft.sample(rng, z[:, None], config.gamma_true)
    y = th.beta0 + th.beta_x * (a - x) + th.beta_z[0] * z + th.sigma * rng.standard_normal(n)
    return z, a, x, y


def generate_dataset(config: ScenarioConfig, replication_index: int = 0,
                     n: Optional[int] = None) -> Dataset:
    """Draw one replication's dataset, keeping the latent X and C."""
    n = config.n if n is None else int(n)
    rng = replication_rng(config.seed, replication_index, 0)
    z, a, x, y = _draw_uncensored(rng, n, config)
    eta = config.censoring_params()
    if eta is None:
        rng.standard_exponential(n)  # keep the stream layout identical
        c = np.full(n, NO_CENSORING_TIME)
    else:
        c = aft.sample(rng, np.column_stack([y, z]), eta)
    w = np.minimum(x, c)
    delta = (x <= c).astype(float)
    return Dataset(y=y, w=w, delta=delta, z=z[:, None], anchor=a, latent_x=x, latent_c=c)


def censoring_fraction(config: ScenarioConfig, eta0: float, n: int = CALIBRATION_ROWS,
                       seed_offset: int = 7919) -> float:
    """Expected censoring fraction at intercept ``eta0``, averaged over a pilot sample.

    The probability ``P(C < X | x, y, z)`` is averaged instead of the
    indicator, which makes the curve smooth in ``eta0``.
    """
    return float(np.mean(_censoring_probability(_pilot(config, n, seed_offset), config, eta0)))


def _pilot(config, n, seed_offset):
    rng = replication_rng(config.seed + seed_offset, 0, 99)
    z, _, x, y = _draw_uncensored(rng, n, config)
    return z, x, y


def _censoring_probability(pilot, config, eta0):
    z, x, y = pilot
    coef = config.eta_true.coefficients
    m = eta0 + coef[1] * y + coef[2] * z
    shape = np.exp(-config.eta_true.log_scale)
    return -np.expm1(-np.exp(shape * (np.log(x) - m)))


def calibrate_eta0(config: ScenarioConfig, target_censoring: float,
                   pilot_rows: int = CALIBRATION_ROWS) -> float:
    """Censoring intercept giving the target censoring fraction.

    Root of the smooth pilot-sample censoring curve by Brent's method on
    ``[-20, 20]``. The fraction decreases as the intercept grows.

    Raises
    ------
    ConfigError
        Target outside (0.05, 0.99).
    NoBracket
        Target not reachable inside the bracket.
    """
    if not 0.05 < target_censoring < 0.99:
        raise ConfigError("target censoring must lie in (0.05, 0.99)")
    pilot = _pilot(config, pilot_rows, 7919)

    def gap(eta0):
        return float(np.mean(_censoring_probability(pilot, config, eta0))) - target_censoring

    lo, hi = CALIBRATION_BRACKET
    g_lo, g_hi = gap(lo), gap(hi)
    if np.sign(g_lo) == np.sign(g_hi):
        raise NoBracket(f"censoring target {target_censoring} unreachable for intercepts "
                        f"in [{lo}, {hi}]")
    return float(brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12))


def resolve(config: ScenarioConfig) -> ScenarioConfig:
    """Fill in the censoring intercept from the target rate if needed."""
    if config.eta_intercept is not None:
        return config
    return config.with_eta_intercept(calibrate_eta0(config, config.target_censoring))


# -- per-replication fitting -------------------------------------------------

def fit_spec(spec: EstimatorSpec, data: Dataset, config: ScenarioConfig, rng=None):
    """Fit one estimator under its specification mode."""
    eta = config.censoring_params()
    gamma = config.gamma_true
    mode = spec.specification
    name = spec.name

    def random_pi():
        lo, hi = config.incorrect_pi_range
        return rng.uniform(lo, hi, data.n)

    if name == "oracle":
        return fit_oracle(data)
    if name == "naive":
        return fit_naive(data)
    if name == "cc":
        return fit_cc(data)
    if name in ("cmi_y_z", "cmi_z"):
        g = {"correct": gamma, "incorrect": config.incorrect_gamma}.get(mode)
        if g is None:
            g = fit_covariate_model(data).params
        return fit_cmi(data, "given_z" if name == "cmi_z" else "given_y_z_censored", g)
    if name in ("acc", "macc"):
        if mode == "estimated":
            eta_use, g = fit_censoring_model(data).params, fit_covariate_model(data).params
        else:
            eta_use, g = eta, gamma
        fitter = fit_acc if name == "acc" else fit_macc
        return fitter(data, eta_use, g, use_lambda=True)
    if name == "ipw":
        if mode == "correct":
            return fit_ipw(data, "true_params", eta)
        if mode == "estimated":
            return fit_ipw(data, "fitted")
        return fit_ipw(data, "supplied_weights", weights=random_pi())
    if name == "mle":
        if mode == "correct":
            return fit_mle(data, "true", gamma)
        if mode == "estimated":
            return fit_mle(data, "fitted")
        return fit_mle(data, "supplied", config.incorrect_gamma)
    augmentation = {"aipw_eff": "eff", "aipw_closed": "closed",
                    "aipw_lambda": "closed_with_lambda"}[name]
    if mode == "correct":
        cfg = AipwConfig(augmentation, "true_params", eta=eta, x_given_z=gamma)
    elif mode == "estimated":
        cfg = AipwConfig(augmentation, "fitted", x_given_z=fit_covariate_model(data).params)
    else:
        cfg = AipwConfig(augmentation, "supplied_weights", eta=eta, weights=random_pi(),
                         x_given_z=gamma)
    return fit_aipw(data, cfg)


def run_replication(config: ScenarioConfig, replication: int):
    """Estimates, standard errors and error names for every configured estimator."""
    data = generate_dataset(config, replication)
    p = config.theta_true.n_params
    est = np.full((len(config.estimators), p), np.nan)
    se = np.full((len(config.estimators), p), np.nan)
    errors = [""] * len(config.estimators)
    for k, spec in enumerate(config.estimators):
        rng = replication_rng(config.seed, replication, 1 + k)
        try:
            res = fit_spec(spec, data, config, rng)
            if not (np.all(np.isfinite(res.estimate)) and np.all(np.isfinite(res.std_errors))):
                raise CensCovError("non-finite estimate or standard error")
        except CensCovError as exc:
            errors[k] = type(exc).__name__
            continue
        est[k] = res.estimate
        se[k] = res.std_errors
    return est, se, errors, data.censoring_rate


def _run_chunk(args):
    config, reps = args
    return [run_replication(config, r) for r in reps]


def worker_count() -> int:
    """Worker processes to use: ``CCT_THREADS`` if set, else available CPUs."""
    env = os.environ.get("CCT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError("CCT_THREADS must be a positive integer") from exc
        if value < 1:
            raise ConfigError("CCT_THREADS must be a positive integer")
        return value
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


# -- metrics and reports -------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    estimator: str
    specification: str
    coefficient: str
    percent_bias: float
    mean_se: float
    empirical_sd: float
    coverage: float
    n: int
    replications: int
    censoring_rate: float
    failures: int


CSV_COLUMNS = ("estimator", "specification", "coefficient", "percent_bias", "mean_se",
               "empirical_sd", "coverage", "n", "replications", "censoring_rate", "failures")


def summarize(estimates, std_errors, truth, z_crit=None):
    """Percent bias, mean SE, empirical SD and Wald coverage, all scaled by 100.

    Rows of ``estimates``/``std_errors`` with any NaN are failures and are
    excluded. The empirical SD divides by the number of successful
    replications. Returns ``(metrics (4, p), failures)``.
    """
    z_crit = norm.ppf(0.975) if z_crit is None else z_crit
    estimates = np.asarray(estimates, dtype=float)
    std_errors = np.asarray(std_errors, dtype=float)
    truth = np.asarray(truth, dtype=float)
    ok = np.all(np.isfinite(estimates), axis=1) & np.all(np.isfinite(std_errors), axis=1)
    failures = int((~ok).sum())
    est, se = estimates[ok], std_errors[ok]
    if est.shape[0] == 0:
        return np.full((4, truth.size), np.nan), failures
    mean = est.mean(axis=0)
    bias = (mean - truth) / truth * 100.0
    mean_se = se.mean(axis=0) * 100.0
    sd = np.sqrt(np.mean((est - mean) ** 2, axis=0)) * 100.0
    cover = np.mean(np.abs(est - truth) <= z_crit * se, axis=0) * 100.0
    return np.vstack([bias, mean_se, sd, cover]), failures


@dataclass
class ScenarioReport:
    """Per-estimator Monte Carlo metrics plus the raw replication results.

    ``estimates`` and ``std_errors`` have shape (estimators, replications, p);
    ``errors`` lists the failure type (or "") per estimator and replication.
    """

    config: ScenarioConfig
    rows: list
    estimates: np.ndarray
    std_errors: np.ndarray
    errors: list
    realized_censoring: float
    censoring_by_replication: np.ndarray = field(repr=False, default=None)

    @property
    def eta_intercept(self) -> float:
        return self.config.eta_intercept

    def row(self, estimator: str, specification: str = "none",
            coefficient: str = "beta0") -> MetricRow:
        for r in self.rows:
            if (r.estimator, r.specification, r.coefficient) == (estimator, specification,
                                                                   coefficient):
                return r
        raise KeyError((estimator, specification, coefficient))

    def results_for(self, estimator: str, specification: str = "none"):
        """Raw (estimates, std_errors) arrays of one estimator."""
        for k, spec in enumerate(self.config.estimators):
            if (spec.name, spec.specification) == (estimator, specification):
                return self.estimates[k], self.std_errors[k]
        raise KeyError((estimator, specification))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_metric_rows(fh, self.rows)

    def summary(self) -> dict:
        cfg = self.config
        fail_counts = {}
        for k, spec in enumerate(cfg.estimators):
            kinds = {}
            for e in self.errors[k]:
                if e:
                    kinds[e] = kinds.get(e, 0) + 1
            fail_counts[spec.label] = kinds
        return {
            "n": cfg.n,
            "replications": cfg.replications,
            "seed": cfg.seed,
            "target_censoring": cfg.target_censoring,
            "eta_intercept": cfg.eta_intercept,
            "realized_censoring": self.realized_censoring,
            "scaling": "percent bias, mean SE, empirical SD and coverage are multiplied by 100",
            "failures": fail_counts,
            "rows": [r.__dict__ for r in self.rows],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def format_float(value) -> str:
    """Shortest decimal string that round-trips the double exactly."""
    return repr(float(value))


def write_metric_rows(fh, rows) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.estimator, r.specification, r.coefficient,
                         format_float(r.percent_bias), format_float(r.mean_se),
                         format_float(r.empirical_sd), format_float(r.coverage), r.n,
                         r.replications, format_float(r.censoring_rate), r.failures])


def build_report(config: ScenarioConfig, results) -> ScenarioReport:
    """Aggregate replication results (in replication order) into a report."""
    est = np.stack([r[0] for r in results], axis=1)
    se = np.stack([r[1] for r in results], axis=1)
    errors = [[r[2][k] for r in results] for k in range(len(config.estimators))]
    cens = np.array([r[3] for r in results])
    names = coefficient_names(len(config.theta_true.beta_z))[:-1]
    truth = config.theta_true.to_vector()[:-1]
    rate = config.target_censoring if config.target_censoring is not None else cens.mean()
    rows = []
    for k, spec in enumerate(config.estimators):
        metrics, failures = summarize(est[k][:, :-1], se[k][:, :-1], truth)
        for j, coef in enumerate(names):
            rows.append(MetricRow(spec.name, spec.specification, coef, *metrics[:, j],
                                  config.n, config.replications, float(rate), failures))
    return ScenarioReport(config, rows, est, se, errors, float(cens.mean()), cens)


def run_scenario(config: ScenarioConfig, workers: Optional[int] = None,
                 progress=None) -> ScenarioReport:
    """Run every replication of a scenario and aggregate the metrics.

    Replications are distributed over ``workers`` processes (default
    :func:`worker_count`); the report does not depend on the worker count.
    """
    config = resolve(config)
    workers = worker_count() if workers is None else max(1, int(workers))
    reps = list(range(config.replications))
    if workers == 1:
        results = []
        for r in reps:
            results.append(run_replication(config, r))
            if progress is not None:
                progress(r + 1, config.replications)
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
        by_rep = {}
        for chunk, part in zip(chunks, parts):
            by_rep.update(zip(chunk, part))
        results = [by_rep[r] for r in reps]
    return build_report(config, results)


def sweep_censoring(config: ScenarioConfig, rates, workers: Optional[int] = None,
                    progress=None) -> list:
    """One report per target censoring rate, in the order given."""
    reports = []
    for rate in rates:
        cfg = replace(config, target_censoring=float(rate), eta_intercept=None)
        reports.append(run_scenario(cfg, workers=workers, progress=progress))
    return reports
