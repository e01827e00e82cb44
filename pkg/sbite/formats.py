"""
File formats: channel CSV, SBW1 raw binary, regression CSV, results CSV and
fit-report JSON.
"""

import csv
import io
import json
import struct
from pathlib import Path
from typing import List, Optional, TextIO, Tuple, Union

import numpy as np

from sbite.errors import ConfigError
from sbite.models.params import Hyperparameters
from sbite.models.report import RESULT_COLUMNS, ResultTable, RiskReport
from sbite.models.sequence import MultichannelSeries

RAW_MAGIC = b"SBW1"
RAW_HEADER = struct.Struct("<4sIQ")

PathLike = Union[str, Path]


def _read_header(path: Path) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            header = next(csv.reader(f), None)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    if not header:
        raise ConfigError(f"{path} is empty")
    return [h.strip() for h in header]


def _load_matrix(path: Path, columns: int) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError as e:
        raise ConfigError(f"{path} contains non-numeric data: {e}") from e
    if values.shape[1] != columns:
        raise ConfigError(f"{path}: rows have {values.shape[1]} fields, header has {columns}")
    return values


def read_channel_csv(path: PathLike, sample_rate: Optional[float] = None) -> MultichannelSeries:
    """Read a CSV with header ch1..chQ, one row per time point"""
    path = Path(path)
    header = _read_header(path)
    expected = [f"ch{q + 1}" for q in range(len(header))]
    if header != expected:
        raise ConfigError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    return MultichannelSeries(_load_matrix(path, len(header)).T, sample_rate=sample_rate)


def write_channel_csv(path: PathLike, series: MultichannelSeries):
    header = ",".join(f"ch{q + 1}" for q in range(series.Q))
    np.savetxt(path, series.samples.T, delimiter=",", header=header, comments="", fmt="%.17g")


def read_raw(path: PathLike, sample_rate: Optional[float] = None) -> MultichannelSeries:
    """
    Read the SBW1 raw format.

    Layout: 16-byte little-endian header (magic 'SBW1', u32 Q, u64 T), then
    Q x T float64 little-endian values, channel-major.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < RAW_HEADER.size:
        raise ConfigError(f"{path} is too short for an SBW1 header")
    magic, Q, T = RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise ConfigError(f"{path} is not an SBW1 file (magic {magic!r})")
    expected = RAW_HEADER.size + 8 * Q * T
    if len(data) != expected:
        raise ConfigError(f"{path} holds {len(data)} bytes, header implies {expected}")
    samples = np.frombuffer(data, dtype="<f8", offset=RAW_HEADER.size).reshape(Q, T)
    return MultichannelSeries(samples.astype(float), sample_rate=sample_rate)


def write_raw(path: PathLike, series: MultichannelSeries):
    with open(path, "wb") as f:
        f.write(RAW_HEADER.pack(RAW_MAGIC, series.Q, series.T))
        f.write(np.ascontiguousarray(series.samples, dtype="<f8").tobytes())


def read_series(path: PathLike) -> MultichannelSeries:
    """Channel CSV or SBW1 raw, chosen by extension (.csv for CSV)"""
    path = Path(path)
    return read_channel_csv(path) if path.suffix.lower() == ".csv" else read_raw(path)


def write_series(path: PathLike, series: MultichannelSeries):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_channel_csv(path, series)
    else:
        write_raw(path, series)


def read_regression_csv(path: PathLike) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Read a regression CSV with header y, x1..xP.

    Returns:
        (X, y, variable names)
    """
    path = Path(path)
    header = _read_header(path)
    if len(header) < 2 or header[0] != "y":
        raise ConfigError(f"{path}: first column must be 'y' followed by x1..xP")
    expected = [f"x{i + 1}" for i in range(len(header) - 1)]
    if header[1:] != expected:
        raise ConfigError(f"{path}: expected covariates {','.join(expected)}")
    values = _load_matrix(path, len(header))
    return values[:, 1:], values[:, 0], header[1:]


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def results_csv(table: ResultTable) -> str:
    """Results table as CSV text, rows sorted by key"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in table.sorted_rows():
        record = row.as_record()
        writer.writerow([_fmt(record[c]) for c in RESULT_COLUMNS])
    return buffer.getvalue()


def write_results_csv(target: Union[PathLike, TextIO], table: ResultTable):
    text = results_csv(table)
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def fit_report(coefficients: np.ndarray, intercept: float, report: RiskReport,
               names: Optional[List[str]] = None) -> dict:
    """
    JSON-ready fit report.

    The active set lists 1-based variable numbers (x1 is 1).
    """
    coefficients = np.asarray(coefficients, dtype=float)
    names = names or [f"x{i + 1}" for i in range(coefficients.size)]
    return {
        "coefficients": {name: float(v) for name, v in zip(names, coefficients)},
        "intercept": float(intercept),
        "active_set": [int(i) + 1 for i in np.flatnonzero(coefficients)],
        "lambda": report.hp.lam,
        "nu": report.hp.nu,
        "s": report.hp.s,
        "sure": report.sure,
        "gsure": report.gsure,
        "edf": report.edf,
    }


def write_fit_report(target: Union[PathLike, TextIO], report: dict):
    text = json.dumps(report, indent=2) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


SURFACE_COLUMNS = ("lambda", "nu", "s", "sure", "gsure", "edf", "active_count")


def surface_csv(surface: List[Tuple[Hyperparameters, Optional[RiskReport]]]) -> str:
    """SURE surface as CSV text; skipped grid points keep empty criterion fields"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SURFACE_COLUMNS)
    for hp, report in surface:
        row = [_fmt(hp.lam), _fmt(hp.nu), _fmt(hp.s)]
        if report is None:
            row += ["", "", "", ""]
        else:
            row += [_fmt(report.sure), _fmt(report.gsure), _fmt(report.edf), _fmt(report.active_count)]
        writer.writerow(row)
    return buffer.getvalue()


def write_surface_csv(target: Union[PathLike, TextIO], surface):
    text = surface_csv(surface)
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write(text)
