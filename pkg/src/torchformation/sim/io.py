"""
Run logs, metrics summaries and output directories.

A run log is a CSV file preceded by ``#`` header lines holding JSON
values. The body has one row per control update of each vehicle, in long
format with a ``vehicle`` column. Floats are written with 17 significant
digits so that a log read back reproduces every value exactly.
"""

from datetime import datetime
import importlib.metadata
import io
import json
import logging
import os
from os import PathLike
from pathlib import Path
import re
import subprocess

from jsonargparse import ArgumentParser, Namespace
import pandas as pd
import torch

from torchformation.errors import CorruptLogError
from torchformation.sim.metrics import compute_metrics
from torchformation.sim.record import (
    SERIES_COLUMNS,
    Failure,
    Metrics,
    RunRecord,
    VehicleRecord,
)
from torchformation.utils.torch import DTYPE, flatten_columns

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "FORMATION_OUTPUT_DIR"
MAGIC = "torchformation run log"
METRICS_TOL = 1e-12

COLUMN_NAMES = {k: v for k, v in SERIES_COLUMNS.items() if v is not None}


def get_version():
    try:
        return importlib.metadata.version("torchformation")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def get_commit():
    try:
        result = subprocess.run(
            [
                "git",
                "-C",
                str(Path(__file__).resolve().parent),
                "rev-parse",
                "--short",
                "HEAD",
            ],
            capture_output=True,
            text=True,
            check=True,
        )
    except (subprocess.CalledProcessError, FileNotFoundError) as e:
        logger.debug(f"Unable to obtain git commit hash: {e}")
        return "unknown"
    else:
        return result.stdout.strip()


def output_dir(default: str | PathLike) -> Path:
    """``default``, unless overridden by the environment."""
    return Path(os.environ.get(OUTPUT_DIR_ENV) or default)


def create_output_directory(
    path: str | PathLike,
    config: Namespace,
    parser: ArgumentParser,
    name: str | None = None,
) -> Path:
    path = path if isinstance(path, Path) else Path(str(path))
    path = path.resolve()

    timestamp = datetime.now()
    name = name or "run_{ts}".format(ts=timestamp.strftime("%Y%m%d%H%M%S"))

    root = path / name
    logger.info(f"Creating output directory at {root}")
    root.mkdir(exist_ok=True, parents=True)

    header = "# Run on {ts} using torchformation v{v}, commit {cm}".format(
        ts=timestamp.strftime("%Y-%m-%d %H:%M"),
        v=get_version(),
        cm=get_commit(),
    )
    config_str = header + "\n" + parser.dump(config, skip_none=False)

    config_file = root / "config.yaml"
    logger.info(f"Saving config to {config_file}")
    config_file.write_text(config_str)

    return root


def log_path(directory: Path, record: RunRecord) -> Path:
    return directory / f"{record.name}_seed{record.seed}.csv"


def metrics_path(log_file: Path) -> Path:
    return log_file.with_suffix(".metrics.json")


def _header(record: RunRecord) -> list[str]:
    def line(key, value):
        return f"# {key}: " + json.dumps(value, sort_keys=True)

    lines = [
        f"# {MAGIC}",
        line("name", record.name),
        line("config_hash", record.config_hash),
        line("seed", record.seed),
        line("version", get_version()),
        line("commit", get_commit()),
    ]
    for i, v in enumerate(record.vehicles):
        lines.append(
            line(
                f"vehicle {i}",
                {
                    "role": v.role,
                    "controller": v.controller,
                    "rate": v.rate,
                    "tracking_window": list(v.tracking_window),
                    "compensation_sign": v.compensation_sign,
                },
            )
        )
    failure = None if record.failure is None else record.failure._asdict()
    lines.append(line("failure", failure))
    return lines


def _body(record: RunRecord) -> pd.DataFrame:
    frames = []
    for i, v in enumerate(record.vehicles):
        columns = flatten_columns(v.series, COLUMN_NAMES) if v.series else {}
        frame = pd.DataFrame(columns)
        frame.insert(0, "status", v.status)
        frame.insert(0, "vehicle", i)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def metrics_summary(record: RunRecord) -> dict:
    return {
        "name": record.name,
        "seed": record.seed,
        "config_hash": record.config_hash,
        "failure": None if record.failure is None else str(record.failure),
        "metric_definition": "rmse: 3-D position RMSE over tracking window",
        "vehicles": [
            {
                "role": v.role,
                "controller": v.controller,
                "rmse": None if v.metrics is None else v.metrics.rmse,
                "z_max": None if v.metrics is None else v.metrics.z_max,
            }
            for v in record.vehicles
        ],
    }


def write_run_log(record: RunRecord, directory: str | PathLike) -> Path:
    """Write the run log and its metrics summary, return the log path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = log_path(directory, record)

    buffer = io.StringIO()
    buffer.write("\n".join(_header(record)) + "\n")
    _body(record).to_csv(
        buffer,
        index=False,
        float_format="%.17g",
        na_rep="nan",
        lineterminator="\n",
    )
    path.write_text(buffer.getvalue())

    metrics_path(path).write_text(
        json.dumps(metrics_summary(record), indent=2, sort_keys=True) + "\n"
    )
    logger.info(f"Wrote run log {path}")
    return path


def _parse_header(path: Path, lines: list[str]) -> dict:
    if not lines or lines[0] != f"# {MAGIC}":
        raise CorruptLogError("not a run log", str(path), 1)
    header = {}
    for n, line in enumerate(lines[1:], start=2):
        key, sep, value = line[2:].partition(": ")
        try:
            if not sep:
                raise ValueError("missing separator")
            header[key] = json.loads(value)
        except ValueError as e:
            raise CorruptLogError(f"bad header ({e})", str(path), n) from e
    for key in ("name", "config_hash", "seed", "failure", "vehicle 0"):
        if key not in header:
            raise CorruptLogError(f"header lacks '{key}'", str(path))
    return header


def _parse_body(path: Path, text: str, offset: int) -> pd.DataFrame:
    try:
        raw = pd.read_csv(
            io.StringIO(text), dtype=str, keep_default_na=False
        )
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        row = int(match.group(1)) + offset if match else None
        raise CorruptLogError("malformed row", str(path), row) from e
    except pd.errors.EmptyDataError as e:
        raise CorruptLogError("no data rows", str(path)) from e

    expected = ["vehicle", "status"]
    for key, suffixes in SERIES_COLUMNS.items():
        if suffixes is None:
            expected.append(key)
        else:
            expected += [f"{key}_{s}" for s in suffixes]
    missing = sorted(set(expected) - set(raw.columns))
    if missing:
        raise CorruptLogError(
            f"missing columns {missing}", str(path), offset + 1
        )

    for name in raw.columns.drop("status"):
        parsed = pd.to_numeric(raw[name], errors="coerce")
        bad = parsed.isna() & (raw[name].str.lower() != "nan")
        if bool(bad.any()):
            # header lines, column names, then 1-based data rows
            row = int(bad.to_numpy().nonzero()[0][0]) + offset + 2
            raise CorruptLogError(
                f"non-numeric value in column '{name}'", str(path), row
            )
    return raw


def _series(frame: pd.DataFrame) -> dict[str, torch.Tensor]:
    def column(name):
        return torch.tensor(frame[name].map(float).to_list(), dtype=DTYPE)

    series = {}
    for key, suffixes in SERIES_COLUMNS.items():
        if suffixes is None:
            series[key] = column(key)
        else:
            series[key] = torch.stack(
                [column(f"{key}_{s}") for s in suffixes], dim=-1
            )
    return series


def read_run_log(path: str | PathLike) -> RunRecord:
    """
    Rebuild a ``RunRecord`` from a run log. Metrics are recomputed from the
    series and checked against the stored summary when one is present.
    """
    path = Path(path)
    lines = path.read_text().splitlines(keepends=True)
    n_header = 0
    while n_header < len(lines) and lines[n_header].startswith("#"):
        n_header += 1

    header = _parse_header(path, [s.rstrip("\n") for s in lines[:n_header]])
    raw = _parse_body(path, "".join(lines[n_header:]), n_header)

    vehicles = []
    i = 0
    while f"vehicle {i}" in header:
        meta = header[f"vehicle {i}"]
        frame = raw[raw["vehicle"].map(float) == i]
        vehicles.append(
            VehicleRecord(
                role=meta["role"],
                controller=meta["controller"],
                rate=float(meta["rate"]),
                tracking_window=tuple(meta["tracking_window"]),
                compensation_sign=meta["compensation_sign"],
                series=_series(frame) if len(frame) else {},
                status=frame["status"].to_list(),
            )
        )
        i += 1

    failure = header["failure"]
    if failure is not None:
        failure = Failure(
            kind=failure["kind"],
            time=float(failure["time"]),
            vehicles=tuple(failure["vehicles"]),
            message=failure["message"],
        )
    else:
        for v in vehicles:
            v.metrics = compute_metrics(v.series, v.tracking_window)

    record = RunRecord(
        name=header["name"],
        seed=int(header["seed"]),
        config_hash=header["config_hash"],
        vehicles=vehicles,
        failure=failure,
    )
    _check_metrics(path, record)
    return record


def _check_metrics(path: Path, record: RunRecord) -> None:
    summary_file = metrics_path(path)
    if not summary_file.is_file():
        return
    try:
        stored = json.loads(summary_file.read_text())["vehicles"]
    except (ValueError, KeyError) as e:
        raise CorruptLogError("bad metrics summary", str(summary_file)) from e

    for v, s in zip(record.vehicles, stored, strict=True):
        if v.metrics is None:
            continue
        stored_metrics = Metrics(s["rmse"], s["z_max"])
        for name, a, b in zip(Metrics._fields, v.metrics, stored_metrics):
            if b is None or abs(a - b) > METRICS_TOL:
                raise CorruptLogError(
                    f"stored {name} of the {v.role} vehicle ({b}) disagrees "
                    f"with the series ({a})",
                    str(summary_file),
                )


def is_run_log(path: Path) -> bool:
    with path.open() as file:
        return file.readline().rstrip("\n") == f"# {MAGIC}"


def find_run_logs(directory: str | PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).rglob("*.csv") if is_run_log(p))
