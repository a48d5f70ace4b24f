"""Acceptance suite: full-scale simulation checks plus the property checks.

Every item prints one PASS/FAIL line; the terminal summary repeats them and
adds one overall line per criterion. The simulation runs are shared session
fixtures (see conftest.py) and take roughly half an hour on one core.
"""
import csv
import math

import numpy as np
import pytest

from censcov import cli
from censcov import simulation as sim
from censcov import weibull_aft as aft
from censcov.estimators import (ConditionalX, ThetaParams, fit_oracle, pi_rows, psi_closed,
                                psi_eff, score_theta)
from censcov.estimators.outcome import dataset_scores
from censcov.numeric import DEFAULT_RULE, finite_diff_jacobian, integrate_lower_truncated

pytestmark = pytest.mark.slow

BETAS = ("beta0", "beta_x", "beta_z")

# (estimator, specification, coefficient, reference value), all x100
BIAS_TARGETS = [
    ("oracle", "none", "beta0", -0.09),
    ("naive", "none", "beta0", -98.90),
    ("naive", "none", "beta_x", -18.25),
    ("cc", "none", "beta0", -21.78),
    ("ipw", "correct", "beta0", -0.21),
    ("ipw", "incorrect", "beta0", -21.89),
    ("mle", "correct", "beta0", -0.06),
    ("mle", "incorrect", "beta0", -5.86),
    ("mle", "incorrect", "beta_x", -3.25),
    ("aipw_eff", "correct", "beta0", 0.11),
    ("aipw_lambda", "correct", "beta0", -0.63),
    ("cmi_z", "correct", "beta0", 36.37),
    ("acc", "correct", "beta0", -19.13),
    ("macc", "correct", "beta0", -21.79),
]

COVERAGE_TARGETS = [
    ("oracle", "none", "beta0", 94.31),
    ("ipw", "correct", "beta0", 93.61),
    ("ipw", "incorrect", "beta0", 6.19),
    ("mle", "correct", "beta0", 95.41),
    ("mle", "incorrect", "beta0", 68.45),
    ("mle", "incorrect", "beta_x", 55.22),
    ("aipw_eff", "correct", "beta0", 94.52),
    ("aipw_lambda", "correct", "beta0", 93.95),
]

# consistent estimators whose nuisance models are correctly specified
CALIBRATION_SET = [
    ("oracle", "none"), ("ipw", "correct"), ("ipw", "estimated"), ("mle", "correct"),
    ("mle", "estimated"), ("aipw_eff", "correct"), ("aipw_eff", "estimated"),
    ("aipw_closed", "correct"), ("aipw_lambda", "correct"), ("aipw_lambda", "estimated"),
]

THETA = ThetaParams(1.0, 1.0, (1.0,), 1.0)
GAMMA = aft.AftParams([0.1, 0.1], np.log(0.5))


def _label(est, spec, coef):
    return f"{est}{'' if spec == 'none' else ':' + spec} {coef}"


def _sd_mc_se(row):
    # Monte Carlo standard error of an SD estimate from N normal-ish replicates
    return row.empirical_sd / math.sqrt(2.0 * (row.replications - row.failures))


# -- criterion 1 ---------------------------------------------------------------

@pytest.mark.parametrize("est,spec,coef,target", BIAS_TARGETS,
                         ids=[_label(*t[:3]).replace(" ", "-") for t in BIAS_TARGETS])
def test_criterion1_percent_bias(table2_report, record, est, spec, coef, target):
    row = table2_report.row(est, spec, coef)
    ok = abs(row.percent_bias - target) <= 3.0
    record(1, f"percent bias {_label(est, spec, coef)}", ok,
           f"got {row.percent_bias:.2f}, reference {target:.2f}, tolerance 3")
    assert ok


# -- criterion 2 ---------------------------------------------------------------

@pytest.mark.parametrize("est,spec,coef,target", COVERAGE_TARGETS,
                         ids=[_label(*t[:3]).replace(" ", "-") for t in COVERAGE_TARGETS])
def test_criterion2_coverage(table2_report, record, est, spec, coef, target):
    row = table2_report.row(est, spec, coef)
    ok = abs(row.coverage - target) <= 3.0
    record(2, f"coverage {_label(est, spec, coef)}", ok,
           f"got {row.coverage:.2f}, reference {target:.2f}, tolerance 3")
    assert ok


# -- criterion 3 ---------------------------------------------------------------

@pytest.mark.parametrize("est,spec", CALIBRATION_SET,
                         ids=[_label(e, s, "").strip() for e, s in CALIBRATION_SET])
def test_criterion3_se_matches_sd(table2_report, record, est, spec):
    worst = 0.0
    parts = []
    for coef in BETAS:
        row = table2_report.row(est, spec, coef)
        ratio = row.mean_se / row.empirical_sd
        worst = max(worst, abs(ratio - 1.0))
        parts.append(f"{coef} SE {row.mean_se:.2f} / SD {row.empirical_sd:.2f}")
    ok = worst <= 0.10
    record(3, f"SE/SD calibration {_label(est, spec, '').strip()}", ok,
           "; ".join(parts) + f"; worst relative gap {100 * worst:.1f}%, tolerance 10%")
    assert ok


# -- criterion 4 ---------------------------------------------------------------

@pytest.mark.parametrize("low,high", [(("mle", "correct"), ("aipw_lambda", "correct")),
                                      (("aipw_lambda", "correct"), ("ipw", "correct"))],
                         ids=["mle<aipw_lambda", "aipw_lambda<ipw"])
def test_criterion4_efficiency_ordering(table2_report, record, low, high):
    a = table2_report.row(*low, "beta0")
    b = table2_report.row(*high, "beta0")
    margin = b.empirical_sd - a.empirical_sd
    mc_se = math.hypot(_sd_mc_se(a), _sd_mc_se(b))
    ok = margin > 2.0 * mc_se
    record(4, f"SD(beta0) {_label(*low, '').strip()} < {_label(*high, '').strip()}", ok,
           f"{a.empirical_sd:.2f} vs {b.empirical_sd:.2f}, margin {margin:.2f}, "
           f"needs > {2.0 * mc_se:.2f}")
    assert ok


# -- criterion 5 ---------------------------------------------------------------

@pytest.mark.parametrize("rate", [0.1, 0.3])
def test_criterion5_low_censoring_unbiased(sweep_reports, record, rate):
    report = sweep_reports[rate]
    rows = [r for r in report.rows if r.coefficient in BETAS]
    worst = max(rows, key=lambda r: abs(r.percent_bias))
    ok = all(abs(r.percent_bias) < 5.0 for r in rows)
    record(5, f"all estimators |bias| < 5 at {rate:.0%} censoring", ok,
           f"largest {abs(worst.percent_bias):.2f} "
           f"({_label(worst.estimator, worst.specification, worst.coefficient)})")
    assert ok


def test_criterion5_mle_breaks_at_95(sweep_reports, record):
    row = sweep_reports[0.95].row("mle", "estimated", "beta0")
    ok = abs(row.percent_bias) > 20.0 and row.coverage < 60.0
    record(5, "mle:estimated beta0 at 95% censoring: |bias| > 20 and coverage < 60", ok,
           f"bias {row.percent_bias:.2f}, coverage {row.coverage:.2f}, "
           f"failures {row.failures}")
    assert ok


@pytest.mark.parametrize("est", ["ipw", "aipw_eff", "aipw_lambda"])
def test_criterion5_weighted_hold_at_95(sweep_reports, record, est):
    row = sweep_reports[0.95].row(est, "estimated", "beta0")
    ok = abs(row.percent_bias) <= 6.0
    record(5, f"{est}:estimated beta0 |bias| <= 6 at 95% censoring", ok,
           f"bias {row.percent_bias:.2f}, failures {row.failures}")
    assert ok


# -- criterion 6 ---------------------------------------------------------------

def _within(rows):
    rows = np.asarray(rows)
    se = rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])
    return np.abs(rows.mean(axis=0)) / se


@pytest.fixture(scope="module")
def design():
    return sim.resolve(sim.ScenarioConfig(replications=1, estimators=sim.TABLE2_ESTIMATORS))


def test_criterion6_zero_censoring_collapse(design, record):
    cfg = design.with_eta_intercept(np.inf)
    data = sim.generate_dataset(cfg, 0, n=400)
    oracle = fit_oracle(data).estimate
    worst, checked = 0.0, 0
    for spec in cfg.estimators:
        # estimated nuisances need censored rows, and random weights are not all one
        if spec.specification in ("estimated", "incorrect"):
            continue
        est = sim.fit_spec(spec, data, cfg).estimate
        worst = max(worst, float(np.max(np.abs(est - oracle))))
        checked += 1
    ok = worst <= 1e-6
    record(6, "zero-censoring collapse to the oracle", ok,
           f"{checked} estimators, max deviation {worst:.2e}, tolerance 1e-6")
    assert ok


def test_criterion6_estimating_functions_mean_zero(design, record):
    big = sim.generate_dataset(design, 1, n=100_000)
    pi = pi_rows(big, design.censoring_params())
    scores = dataset_scores(big, big.w, THETA)
    ipw = (big.delta / pi)[:, None] * scores
    aug = (1.0 - big.delta / pi)[:, None] * psi_closed(big.y, big.z, THETA, GAMMA,
                                                       anchor=big.anchor)
    cens = big.delta == 0
    mle = big.delta[:, None] * scores
    mle[cens] = ConditionalX(big, GAMMA, rows=cens, truncate=True).expected_score(THETA)
    z = {name: float(_within(rows).max()) for name, rows in
         (("ipw", ipw), ("aipw augmentation", aug), ("mle", mle))}
    ok = all(v < 3.0 for v in z.values())
    record(6, "estimating functions mean-zero at the truth on 1e5 rows", ok,
           ", ".join(f"{k} max |mean|/SE {v:.2f}" for k, v in z.items()) + ", bound 3")
    assert ok


def test_criterion6_aft_scores(record):
    rng = np.random.default_rng(2024)
    n = 200
    z = rng.normal(size=(n, 2))
    x = aft.sample(rng, z, aft.AftParams([0.2, 0.5, -0.3], np.log(0.7)))
    c = rng.exponential(2.0, n)
    times, status = np.minimum(x, c), (x <= c).astype(float)
    worst = 0.0
    for _ in range(5):
        vec = np.append(rng.normal(0, 0.5, 3), rng.normal(-0.3, 0.3))
        numeric = finite_diff_jacobian(
            lambda v: np.array([aft.loglik(times, status, z, aft.AftParams.from_vector(v))]),
            vec)[0]
        analytic = aft.score_aft(times, status, z, aft.AftParams.from_vector(vec))
        scale = np.maximum(np.abs(numeric), 1e-3 * np.abs(numeric).max())
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    ok = worst <= 1e-5
    record(6, "AFT analytic score matches finite differences", ok,
           f"max relative error {worst:.2e}, tolerance 1e-5")
    assert ok


def test_criterion6_survival_matches_quadrature(record):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        shape = rng.uniform(0.5, 5.0)
        p = aft.AftParams.from_shape(rng.normal(0, 0.5, 3), shape)
        z = rng.normal(size=2)
        scale = float(aft.weibull_scale(z, p))
        t = scale * rng.uniform(0.05, 2.0)
        tail = integrate_lower_truncated(lambda v: np.exp(aft.log_density(v, z, p)), t,
                                         DEFAULT_RULE, scale=scale)
        worst = max(worst, abs(tail - float(aft.survival_prob(t, z, p))))
    ok = worst <= 1e-6
    record(6, "survival_prob matches quadrature of log_density", ok,
           f"100 random Weibull models, max abs error {worst:.2e}, tolerance 1e-6")
    assert ok


def test_criterion6_sandwich_symmetric_psd(design, record):
    data = sim.generate_dataset(design, 0)
    worst_asym, worst_eig = 0.0, np.inf
    for label in ("ipw:correct", "ipw:estimated", "aipw_eff:estimated", "aipw_lambda:correct",
                  "mle:estimated", "cc", "acc:correct"):
        spec = sim.EstimatorSpec.parse(label)
        cov = sim.fit_spec(spec, data, design, np.random.default_rng(0)).covariance
        worst_asym = max(worst_asym, float(np.max(np.abs(cov - cov.T))))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(cov).min() / np.abs(cov).max()))
    ok = worst_asym == 0.0 and worst_eig >= -1e-12
    record(6, "sandwich covariances symmetric PSD", ok,
           f"max asymmetry {worst_asym:.1e}, min relative eigenvalue {worst_eig:.2e}")
    assert ok


def _rejection_draws(y, z, n, seed):
    rng = np.random.default_rng(seed)
    kept, total = [], 0
    while total < n:
        x = aft.sample(rng, np.full(400_000, z), GAMMA)
        eps = y - THETA.beta0 - THETA.beta_x * (2.0 - x) - THETA.beta_z[0] * z
        keep = rng.random(x.size) < np.exp(-0.5 * (eps / THETA.sigma) ** 2)
        kept.append(x[keep])
        total += keep.sum()
    return np.concatenate(kept)[:n]


def test_criterion6_psi_monte_carlo(record):
    y, z = 2.0, 0.2
    x = _rejection_draws(y, z, 1_000_000, seed=3)
    rows = score_theta(np.full(x.size, y), 2.0 - x, np.full(x.size, z), THETA)
    n = x.size
    closed_gap = np.abs(psi_closed(y, [z], THETA, GAMMA, anchor=2.0) - rows.mean(axis=0))
    closed_z = closed_gap / (rows.std(axis=0, ddof=1) / math.sqrt(n))
    eta = aft.AftParams([0.5, 0.5, 0.5], np.log(1.5))
    wt = 1.0 - 1.0 / aft.survival_prob(x, np.array([y, z]), eta)
    ratio = (wt[:, None] * rows).mean(axis=0) / wt.mean()
    infl = (wt[:, None] * rows - ratio * wt[:, None]) / wt.mean()
    eff_z = np.abs(psi_eff(y, [z], THETA, eta, GAMMA, anchor=2.0) - ratio) / (
        infl.std(axis=0, ddof=1) / math.sqrt(n))
    ok = bool(np.all(closed_z < 3.0) and np.all(eff_z < 3.0))
    record(6, "psi_closed and psi_eff match Monte Carlo oracles", ok,
           f"1e6 draws, max |gap|/SE closed {closed_z.max():.2f}, eff {eff_z.max():.2f}, "
           "bound 3")
    assert ok


def test_criterion6_determinism(design, record):
    cfg = sim.ScenarioConfig(n=300, replications=3, seed=5,
                             estimators=("oracle", "ipw:estimated", "aipw_lambda:incorrect"))
    a, b = sim.generate_dataset(design, 7), sim.generate_dataset(design, 7)
    same_data = all(getattr(a, k).tobytes() == getattr(b, k).tobytes()
                    for k in ("y", "w", "delta", "z", "anchor"))
    r1 = sim.run_scenario(cfg, workers=1)
    r2 = sim.run_scenario(cfg, workers=2)
    same_runs = (r1.estimates.tobytes() == r2.estimates.tobytes()
                 and r1.std_errors.tobytes() == r2.std_errors.tobytes())
    ok = same_data and same_runs
    record(6, "byte-for-byte determinism under a fixed seed", ok,
           f"datasets identical {same_data}, scenario runs identical {same_runs}")
    assert ok


# -- criterion 7 ---------------------------------------------------------------

def test_criterion7_fit_round_trip(design, record, tmp_path):
    data = sim.generate_dataset(design, 0)
    path = tmp_path / "synthetic.csv"
    cli.write_dataset_csv(data, path)
    results = {}
    for est, extra in (("oracle", ["--latent", "latent_x"]), ("aipw-lambda", [])):
        out = tmp_path / f"{est}.csv"
        rc = cli.main(["fit", "--input", str(path), "--outcome", "y", "--time", "w",
                       "--status", "delta", "--covariates", "z", "--anchor", "anchor",
                       "--estimator", est, "--out", str(out), *extra])
        with open(out, newline="") as fh:
            results[est] = (rc, np.array([float(r["estimate"]) for r in csv.DictReader(fh)]))
    library = cli.fit_estimator(cli.read_dataset_csv(path, anchor="anchor"), "aipw-lambda")
    ok = (results["oracle"][0] == 0 and results["aipw-lambda"][0] == 0
          and np.array_equal(results["oracle"][1], fit_oracle(data).estimate)
          and np.array_equal(results["aipw-lambda"][1], library.estimate))
    record(7, "fit round-trip on a synthetic CSV equals the library fits", ok,
           "oracle and aipw-lambda estimates compared exactly")
    assert ok


@pytest.mark.parametrize("coef", BETAS)
def test_criterion7_lambda_narrows_intervals(table2_report, record, coef):
    lam = table2_report.row("aipw_lambda", "estimated", coef)
    ipw = table2_report.row("ipw", "estimated", coef)
    ok = lam.mean_se < ipw.mean_se
    record(7, f"mean SE aipw_lambda:estimated < ipw:estimated for {coef}", ok,
           f"{lam.mean_se:.2f} vs {ipw.mean_se:.2f} "
           f"({100 * (1 - lam.mean_se / ipw.mean_se):.1f}% narrower)")
    assert ok
