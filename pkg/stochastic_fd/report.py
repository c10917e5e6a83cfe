import csv
import io
import os

from stdl import fs

from stochastic_fd.convergence import ConvergenceReport, ErrorRow

REPORT_FORMATS = ("csv", "json")
ERROR_COLUMNS = ("h", "level", "seed", "method", "norm", "value")


def _g17(value: float) -> str:
    return f"{value:.17g}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def errors_csv(report: ConvergenceReport) -> str:
    rows = [
        [_g17(i.h), str(i.level), str(i.seed), i.method, i.norm, _g17(i.value)] for i in report.errors
    ]
    return _table(list(ERROR_COLUMNS), rows)


def fits_csv(report: ConvergenceReport) -> str:
    rows = []
    for i in report.fits:
        fit = i.fit
        rows.append(
            [
                i.method,
                i.norm,
                "" if i.seed is None else str(i.seed),
                "" if fit.slope is None else _g17(fit.slope),
                "" if fit.r_squared is None else _g17(fit.r_squared),
                str(len(fit.pairs)),
                str(fit.exact).lower(),
            ]
        )
    return _table(["method", "norm", "seed", "slope", "r_squared", "pairs", "exact"], rows)


def moments_csv(report: ConvergenceReport) -> str:
    rows = [
        [
            _g17(i.h),
            i.method,
            i.norm,
            _g17(i.p),
            _g17(i.estimate.value),
            _g17(i.estimate.half_width),
            str(i.estimate.samples),
            str(i.estimate.degenerate).lower(),
        ]
        for i in report.moments
    ]
    header = ["h", "method", "norm", "p", "value", "half_width", "samples", "degenerate"]
    return _table(header, rows)


def emit_report(report: ConvergenceReport, format: str, directory: str) -> list[str]:
    """
    Write the report to ``directory``.

    CSV output is ``<name>_errors.csv`` (one row per h, seed, method and norm), ``<name>_fits.csv``
    and ``<name>_moments.csv``. JSON output is the full report tree in ``<name>.json``.

    Returns:
        list[str]: Paths of the written files.
    """
    if format not in REPORT_FORMATS:
        raise ValueError(f"Unknown report format '{format}', expected one of {REPORT_FORMATS}")
    os.makedirs(directory, exist_ok=True)
    if format == "json":
        path = os.path.join(directory, f"{report.name}.json")
        fs.File(path).write(report.model_dump_json(indent=2))
        return [path]
    written = []
    for suffix, text in (
        ("errors", errors_csv(report)),
        ("fits", fits_csv(report)),
        ("moments", moments_csv(report)),
    ):
        path = os.path.join(directory, f"{report.name}_{suffix}.csv")
        fs.File(path).write(text)
        written.append(path)
    return written


def read_errors_csv(path: str) -> list[ErrorRow]:
    reader = csv.DictReader(io.StringIO(fs.File(path).read()))
    missing = set(ERROR_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"{path} is missing columns {sorted(missing)}")
    return [ErrorRow.model_validate(row) for row in reader]


def read_report_json(path: str) -> ConvergenceReport:
    return ConvergenceReport.model_validate_json(fs.File(path).read())


__all__ = [
    "REPORT_FORMATS",
    "emit_report",
    "errors_csv",
    "fits_csv",
    "moments_csv",
    "read_errors_csv",
    "read_report_json",
]
