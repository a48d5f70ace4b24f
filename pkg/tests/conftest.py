import os
from pathlib import Path

import pytest

from censcov import simulation as sim

TABLE2_REPLICATIONS = 500
SWEEP_REPLICATIONS = 200
SWEEP_RATES = (0.1, 0.3, 0.6, 0.8, 0.95)

# criterion lines collected by the acceptance suite, printed at the end of the run
ACCEPTANCE_LINES = []


def _results_dir():
    # optional location for keeping the full-scale reports
    path = os.environ.get("CENSCOV_RESULTS_DIR")
    if path:
        Path(path).mkdir(parents=True, exist_ok=True)
        return Path(path)
    return None


def _progress(label):
    def report(done, total):
        if done == total or done % max(1, total // 10) == 0:
            print(f"[{label}] replication {done}/{total}", flush=True)
    return report


@pytest.fixture(scope="session")
def table2_report():
    config = sim.ScenarioConfig(replications=TABLE2_REPLICATIONS,
                                estimators=sim.TABLE2_ESTIMATORS)
    report = sim.run_scenario(config, progress=_progress("table 2"))
    out = _results_dir()
    if out is not None:
        report.write_csv(out / "table2.csv")
        report.write_json(out / "table2.json")
    return report


@pytest.fixture(scope="session")
def sweep_reports():
    config = sim.ScenarioConfig(replications=SWEEP_REPLICATIONS,
                                estimators=sim.SWEEP_ESTIMATORS)
    reports = sim.sweep_censoring(config, SWEEP_RATES, progress=_progress("sweep"))
    out = _results_dir()
    if out is not None:
        rows = [row for rep in reports for row in rep.rows]
        with open(out / "sweep_combined.csv", "w", newline="", encoding="utf-8") as fh:
            sim.write_metric_rows(fh, rows)
    return dict(zip(SWEEP_RATES, reports))


@pytest.fixture
def record():
    def add(criterion, item, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {item}  [{detail}]"
        ACCEPTANCE_LINES.append((criterion, passed, line))
        print(line)
        return passed
    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    criteria = sorted({c for c, _, _ in ACCEPTANCE_LINES})
    for c in criteria:
        flags = [p for k, p, _ in ACCEPTANCE_LINES if k == c]
        status = "PASS" if all(flags) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {c} overall: "
                                    f"{sum(flags)}/{len(flags)} items pass")

