"""Command-line interface: ``censcov fit | simulate | sweep``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import simulation as sim
from . import weibull_aft as aft
from .errors import CensCovError, ConfigError, DataError, ParseError
from .estimators import (INCONSISTENT, AipwConfig, Dataset, ThetaParams, coefficient_names,
                         fit_acc, fit_aipw, fit_cc, fit_censoring_model, fit_cmi,
                         fit_covariate_model, fit_ipw, fit_macc, fit_mle, fit_naive, fit_oracle)

FIT_ESTIMATORS = ("oracle", "naive", "cc", "cmi-z", "cmi-y-z", "acc", "macc", "ipw", "aipw",
                  "aipw-eff", "aipw-closed", "aipw-lambda", "mle")
AUGMENTATION_FLAGS = {"eff": "eff", "closed": "closed", "closed-lambda": "closed_with_lambda"}
FIT_COLUMNS = ("coefficient", "estimate", "std_error", "ci_lower", "ci_upper", "estimator",
               "converged", "inconsistent", "n", "n_used", "censoring_rate")

# config key -> (type, default)
CONFIG_SECTION = "scenario"
CONFIG_KEYS = {
    "n": (int, 1000),
    "replications": (int, 500),
    "seed": (int, 20240101),
    "target_censoring": (float, 0.6),
    "eta_intercept": (float, None),
    "estimators": (str, ",".join(s.label for s in sim.TABLE2_ESTIMATORS)),
    "beta0": (float, 1.0),
    "beta_x": (float, 1.0),
    "beta_z": (float, 1.0),
    "sigma": (float, 1.0),
    "gamma0": (float, 0.1),
    "gamma_z": (float, 0.1),
    "gamma_sigma": (float, 0.5),
    "eta_y": (float, 0.5),
    "eta_z": (float, 0.5),
    "eta_sigma": (float, 1.5),
    "anchor_mean": (float, 2.0),
    "anchor_sd": (float, 1.0),
    "incorrect_gamma_sigma": (float, 1.2),
    "incorrect_pi_low": (float, 0.1),
    "incorrect_pi_high": (float, 0.9),
}


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- CSV input/output ----------------------------------------------------------

def format_value(value) -> str:
    """Decimal text that reads back to the identical double."""
    return repr(float(value))


def read_table(path) -> tuple:
    """Header and rows of a comma-separated file."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: file is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def numeric_columns(path, names) -> dict:
    """Parse the named columns of a CSV file as floats.

    Raises
    ------
    ParseError
        A column is missing, a row has the wrong number of fields, or a
        value is not a finite number. Messages name the row and column.
    """
    header, rows = read_table(path)
    missing = [c for c in names if c not in header]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(repr(c) for c in missing)}")
    index = {c: header.index(c) for c in names}
    out = {c: np.empty(len(rows)) for c in names}
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        for c, j in index.items():
            text = row[j].strip()
            try:
                val = float(text)
            except ValueError:
                raise ParseError(f"{path}: row {line}, column {c!r}: {text!r} is not a number")
            if not math.isfinite(val):
                raise ParseError(f"{path}: row {line}, column {c!r}: value must be finite")
            out[c][r] = val
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return out


def write_dataset_csv(data: Dataset, path, z_names=None) -> None:
    """Write a dataset with columns y, w, delta, z..., and anchor/latent values if present."""
    z_names = list(z_names or ([f"z{j + 1}" for j in range(data.n_z)] if data.n_z > 1
                               else ["z"] * data.n_z))
    cols = {"y": data.y, "w": data.w, "delta": data.delta}
    for j, name in enumerate(z_names):
        cols[name] = data.z[:, j]
    for name in ("anchor", "latent_x", "latent_c"):
        if getattr(data, name) is not None:
            cols[name] = getattr(data, name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for i in range(data.n):
            writer.writerow([format_value(v[i]) if k != "delta" else str(int(v[i]))
                             for k, v in cols.items()])


def read_dataset_csv(path, outcome="y", time="w", status="delta", covariates=("z",),
                     anchor=None, latent=None) -> Dataset:
    """Build a :class:`Dataset` from named CSV columns."""
    names = [outcome, time, status, *covariates]
    names += [c for c in (anchor, latent) if c]
    if len(set(names)) != len(names):
        raise ParseError("each column may be used only once")
    cols = numeric_columns(path, names)
    delta = cols[status]
    bad = np.flatnonzero(~np.isin(delta, (0.0, 1.0)))
    if bad.size:
        raise ParseError(f"{path}: row {bad[0] + 2}, column {status!r}: status must be 0 or 1")
    z = np.column_stack([cols[c] for c in covariates]) if covariates else np.zeros((delta.size, 0))
    return Dataset(cols[outcome], cols[time], delta, z,
                   anchor=cols[anchor] if anchor else None,
                   latent_x=cols[latent] if latent else None)


# -- fit -----------------------------------------------------------------------

def fit_estimator(data: Dataset, estimator: str, pi: str = "fitted", weights=None,
                  augmentation: str = "closed-lambda"):
    """Fit one estimator with every nuisance model estimated from the data."""
    if estimator not in FIT_ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    if pi not in ("fitted", "supplied"):
        raise ConfigError("--pi must be 'fitted' or 'supplied'")
    if pi == "supplied" and weights is None:
        raise ConfigError("--pi supplied needs --weights naming a probability column")
    if estimator == "oracle":
        return fit_oracle(data)
    if estimator == "naive":
        return fit_naive(data)
    if estimator == "cc":
        return fit_cc(data)
    if estimator in ("cmi-z", "cmi-y-z"):
        variant = "given_z" if estimator == "cmi-z" else "given_y_z_censored"
        return fit_cmi(data, variant, fit_covariate_model(data).params)
    if estimator in ("acc", "macc"):
        fitter = fit_acc if estimator == "acc" else fit_macc
        return fitter(data, fit_censoring_model(data).params, fit_covariate_model(data).params)
    if estimator == "mle":
        return fit_mle(data, "fitted")
    if estimator == "ipw":
        if pi == "supplied":
            return fit_ipw(data, "supplied_weights", weights=weights)
        return fit_ipw(data, "fitted")
    aug = {"aipw-eff": "eff", "aipw-closed": "closed",
           "aipw-lambda": "closed_with_lambda"}.get(estimator)
    if aug is None:
        if augmentation not in AUGMENTATION_FLAGS:
            raise ConfigError(f"--augmentation must be one of {sorted(AUGMENTATION_FLAGS)}")
        aug = AUGMENTATION_FLAGS[augmentation]
    gamma = fit_covariate_model(data).params
    if pi == "supplied":
        eta = fit_censoring_model(data).params if aug == "eff" else None
        cfg = AipwConfig(aug, "supplied_weights", eta=eta, weights=weights, x_given_z=gamma)
    else:
        cfg = AipwConfig(aug, "fitted", x_given_z=gamma)
    return fit_aipw(data, cfg)


def fit_table(result, data: Dataset, names) -> list:
    """Rows of the fit report, one per parameter."""
    ci = result.confidence_intervals()
    rows = []
    for j, name in enumerate(names):
        rows.append({
            "coefficient": name,
            "estimate": format_value(result.estimate[j]),
            "std_error": format_value(result.std_errors[j]),
            "ci_lower": format_value(ci[j, 0]),
            "ci_upper": format_value(ci[j, 1]),
            "estimator": result.estimator_id,
            "converged": str(bool(result.converged)).lower(),
            "inconsistent": str(bool(result.metadata.get(INCONSISTENT, False))).lower(),
            "n": str(data.n),
            "n_used": str(result.n_used),
            "censoring_rate": format_value(data.censoring_rate),
        })
    return rows


def cmd_fit(args) -> int:
    covariates = [c.strip() for c in args.covariates.split(",") if c.strip()] \
        if args.covariates else []
    data = read_dataset_csv(args.input, args.outcome, args.time, args.status, covariates,
                            anchor=args.anchor, latent=args.latent)
    weights = None
    if args.weights:
        weights = numeric_columns(args.input, [args.weights])[args.weights]
    result = fit_estimator(data, args.estimator, args.pi, weights, args.augmentation)
    names = coefficient_names(0)[:2] + [f"beta_{c}" for c in covariates] + ["sigma"]
    rows = fit_table(result, data, names)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, FIT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"estimator {result.estimator_id}: n = {data.n}, "
          f"censoring {100 * data.censoring_rate:.1f}%, n used = {result.n_used}")
    if result.metadata.get(INCONSISTENT):
        print("warning: this estimator is inconsistent when censoring depends on the outcome")
    print(f"{'coefficient':<14}{'estimate':>12}{'SE':>12}{'95% CI':>28}")
    ci = result.confidence_intervals()
    for j, name in enumerate(names):
        print(f"{name:<14}{result.estimate[j]:>12.5f}{result.std_errors[j]:>12.5f}"
              f"{'(' + f'{ci[j, 0]:.5f}, {ci[j, 1]:.5f}' + ')':>28}")
    print(f"written to {out}")
    return 0


# -- simulate / sweep ----------------------------------------------------------

def load_config(path) -> sim.ScenarioConfig:
    """Read a flat ``key = value`` scenario file into a :class:`ScenarioConfig`.

    The file has a single ``[scenario]`` section. Unknown keys, unparseable
    values and invalid combinations raise :class:`ConfigError` naming the
    offending field.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if parser.sections() != [CONFIG_SECTION]:
        raise ConfigError(f"{path}: expected exactly one [{CONFIG_SECTION}] section")
    section = parser[CONFIG_SECTION]
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    for key, text in section.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown field {key!r}")
        kind = CONFIG_KEYS[key][0]
        text = text.strip()
        if text.lower() in ("", "none"):
            values[key] = None
            continue
        try:
            values[key] = kind(text)
        except ValueError:
            raise ConfigError(f"{path}: field {key!r}: cannot read {text!r} as "
                              f"{kind.__name__}") from None
    if values["target_censoring"] is None and values["eta_intercept"] is None:
        raise ConfigError(f"{path}: set target_censoring or eta_intercept")
    if values["eta_intercept"] is not None:
        values["target_censoring"] = None
    for key in ("gamma_sigma", "eta_sigma", "incorrect_gamma_sigma", "sigma", "anchor_sd"):
        if values[key] is None or not values[key] > 0:
            raise ConfigError(f"{path}: field {key!r} must be positive")
    try:
        return sim.ScenarioConfig(
            n=_required(values, "n", path),
            replications=_required(values, "replications", path),
            theta_true=ThetaParams(_required(values, "beta0", path),
                                   _required(values, "beta_x", path),
                                   (_required(values, "beta_z", path),), values["sigma"]),
            gamma_true=aft.AftParams([_required(values, "gamma0", path),
                                      _required(values, "gamma_z", path)],
                                     math.log(values["gamma_sigma"])),
            eta_true=aft.AftParams([0.0, _required(values, "eta_y", path),
                                    _required(values, "eta_z", path)],
                                   math.log(values["eta_sigma"])),
            target_censoring=values["target_censoring"],
            eta_intercept=values["eta_intercept"],
            estimators=tuple(e for e in _required(values, "estimators", path).split(",")
                             if e.strip()),
            seed=_required(values, "seed", path),
            anchor_mean=_required(values, "anchor_mean", path),
            anchor_sd=values["anchor_sd"],
            incorrect_gamma_scale=values["incorrect_gamma_sigma"],
            incorrect_pi_range=(_required(values, "incorrect_pi_low", path),
                                _required(values, "incorrect_pi_high", path)),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _required(values, key, path):
    if values[key] is None:
        raise ConfigError(f"{path}: field {key!r} must be set")
    return values[key]


def bundled_config(name: str = "table2_desk.cfg") -> Path:
    """Path of a scenario file shipped with the package."""
    return Path(__file__).with_name("configs") / name


def format_report(report: sim.ScenarioReport) -> str:
    """Table of percent bias, mean SE, empirical SD and coverage (all x100)."""
    lines = [f"n = {report.config.n}, replications = {report.config.replications}, "
             f"realized censoring = {100 * report.realized_censoring:.2f}%",
             "all columns x100: Bias = percent bias, SE = mean estimated SE, "
             "SD = empirical SD, Cov = 95% CI coverage",
             f"{'estimator':<22}{'coef':<8}{'Bias':>9}{'SE':>9}{'SD':>9}{'Cov':>9}{'fail':>6}"]
    for r in report.rows:
        label = r.estimator if r.specification == "none" else f"{r.estimator}:{r.specification}"
        lines.append(f"{label:<22}{r.coefficient:<8}{r.percent_bias:>9.2f}{r.mean_se:>9.2f}"
                     f"{r.empirical_sd:>9.2f}{r.coverage:>9.2f}{r.failures:>6d}")
    return "\n".join(lines)


def _progress(done, total):
    if done == total or done % max(1, total // 10) == 0:
        print(f"  replication {done}/{total}", file=sys.stderr, flush=True)


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = sim.run_scenario(config, progress=None if args.quiet else _progress)
    report.write_csv(out / "report.csv")
    report.write_json(out / "summary.json")
    print(format_report(report))
    print(f"written to {out / 'report.csv'} and {out / 'summary.json'}")
    return 0


def parse_rates(text: str) -> list:
    rates = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            rate = float(part)
        except ValueError:
            raise ConfigError(f"--rates: {part!r} is not a number") from None
        if not 0.05 < rate < 0.99:
            raise ConfigError(f"--rates: {rate} is outside (0.05, 0.99)")
        rates.append(rate)
    if not rates:
        raise ConfigError("--rates needs at least one value")
    return rates


def rate_tag(rate: float) -> str:
    return f"{rate:g}".replace(".", "p")


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    rates = parse_rates(args.rates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.target_censoring is None:
        config = replace(config, target_censoring=rates[0], eta_intercept=None)
    reports = sim.sweep_censoring(config, rates, progress=None if args.quiet else _progress)
    combined = []
    for rate, report in zip(rates, reports):
        report.write_csv(out / f"sweep_{rate_tag(rate)}.csv")
        combined.extend(report.rows)
        print(f"target censoring {rate:g}")
        print(format_report(report))
        print()
    with open(out / "sweep_combined.csv", "w", newline="", encoding="utf-8") as fh:
        sim.write_metric_rows(fh, combined)
    print(f"written {len(rates)} per-rate files and {out / 'sweep_combined.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="censcov",
                     description="Linear regression with a right-censored covariate.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit an estimator to a CSV file")
    fit.add_argument("--input", required=True, help="CSV file with a header row")
    fit.add_argument("--outcome", required=True, help="outcome column")
    fit.add_argument("--time", required=True, help="observed covariate min(X, C)")
    fit.add_argument("--status", required=True, help="1 if the covariate is observed, else 0")
    fit.add_argument("--covariates", default="", help="comma-separated fully observed columns")
    fit.add_argument("--estimator", required=True, choices=FIT_ESTIMATORS)
    fit.add_argument("--pi", choices=("fitted", "supplied"), default="fitted",
                     help="observation probabilities: Weibull fit or a column (--weights)")
    fit.add_argument("--weights", help="column of observation probabilities for --pi supplied")
    fit.add_argument("--augmentation", choices=tuple(AUGMENTATION_FLAGS),
                     default="closed-lambda", help="augmentation for --estimator aipw")
    fit.add_argument("--anchor", help="column A; the regressor becomes A - covariate")
    fit.add_argument("--latent", help="column of true covariate values (oracle only)")
    fit.add_argument("--out", required=True, help="output CSV path")
    fit.set_defaults(func=cmd_fit)

    simulate = sub.add_parser("simulate", help="run a simulation scenario")
    simulate.add_argument("--config", required=True, help="scenario file")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--quiet", action="store_true", help="no progress messages")
    simulate.set_defaults(func=cmd_simulate)

    sweep = sub.add_parser("sweep", help="run a scenario at several censoring rates")
    sweep.add_argument("--config", required=True, help="scenario file")
    sweep.add_argument("--rates", required=True, help="comma-separated censoring rates")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--quiet", action="store_true", help="no progress messages")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return DataError.exit_code
    except CensCovError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
