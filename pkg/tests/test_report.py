import os

import pytest

from stochastic_fd.config import load_preset
from stochastic_fd.convergence import ConvergenceReport, ErrorRow, run_convergence
from stochastic_fd.report import emit_report, errors_csv, read_errors_csv, read_report_json
from stochastic_fd.stats import OrderFit


@pytest.fixture(scope="module")
def report() -> ConvergenceReport:
    return run_convergence(load_preset("heat"))


def test_errors_csv_round_trip(tmp_path, report):
    written = emit_report(report, "csv", str(tmp_path))
    assert [os.path.basename(i) for i in written] == [
        "heat_errors.csv",
        "heat_fits.csv",
        "heat_moments.csv",
    ]
    assert read_errors_csv(written[0]) == report.errors


def test_json_round_trip(tmp_path, report):
    (path,) = emit_report(report, "json", str(tmp_path / "nested"))
    assert path.endswith("heat.json")
    assert read_report_json(path) == report


def test_csv_layout():
    report = ConvergenceReport(
        name="tiny",
        reference="exact",
        seeds=[0],
        spacings=[0.1],
        errors=[ErrorRow(h=0.1, level=0, seed=0, method="plain", norm="sup", value=1 / 3)],
    )
    lines = errors_csv(report).splitlines()
    assert lines[0] == "h,level,seed,method,norm,value"
    assert lines[1] == "0.10000000000000001,0,0,plain,sup,0.33333333333333331"


def test_unknown_format(tmp_path, report):
    with pytest.raises(ValueError):
        emit_report(report, "xml", str(tmp_path))


def test_missing_columns(tmp_path):
    path = tmp_path / "broken.csv"
    path.write_text("h,value\n0.1,0.5\n")
    with pytest.raises(ValueError):
        read_errors_csv(str(path))


def test_fit_lookup(report):
    assert isinstance(report.fit("plain", "l2h"), OrderFit)
    with pytest.raises(KeyError):
        report.fit("plain", "l2h", seed=7)
