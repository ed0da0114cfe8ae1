from dataclasses import dataclass
import json
import logging
from os import PathLike
from pathlib import Path
import sys

from jsonargparse import ArgumentParser, Namespace
import pandas as pd

from torchformation.errors import CorruptLogError, GroupingError
from torchformation.sim.io import find_run_logs, read_run_log
from torchformation.sim.metrics import aggregate_stats, metrics_table
from torchformation.sim.record import RunRecord
from torchformation.utils.torch import to_numpy

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1


@dataclass
class ReportBundle:
    summary: pd.DataFrame
    runs: pd.DataFrame
    failures: pd.DataFrame
    series: dict[str, pd.DataFrame]


def load_runs(directory: str | PathLike) -> list[RunRecord]:
    return [read_run_log(path) for path in find_run_logs(directory)]


def time_history(record: RunRecord) -> pd.DataFrame:
    """Altitude, reference altitude and thrust of every vehicle."""
    frames = []
    for i, vehicle in enumerate(record.vehicles):
        s = vehicle.series
        frames.append(
            pd.DataFrame(
                {
                    "vehicle": i,
                    "role": vehicle.role,
                    "controller": vehicle.controller,
                    "t": to_numpy(s["t"]),
                    "z": to_numpy(s["p"][:, 2]),
                    "z_ref": to_numpy(s["p_ref"][:, 2]),
                    "thrust": to_numpy(s["u"][:, 0]),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def build_report(records: list[RunRecord]) -> ReportBundle:
    runs = metrics_table(records)
    failures = pd.DataFrame(
        [
            {
                "name": r.name,
                "seed": r.seed,
                "kind": r.failure.kind,
                "time": r.failure.time,
                "vehicles": " ".join(str(i) for i in r.failure.vehicles),
                "message": r.failure.message,
            }
            for r in records
            if r.failed
        ],
        columns=["name", "seed", "kind", "time", "vehicles", "message"],
    )
    return ReportBundle(
        summary=aggregate_stats(records),
        runs=runs,
        failures=failures,
        series={f"{r.name}_seed{r.seed}": time_history(r) for r in records},
    )


def write_report(bundle: ReportBundle, directory: str | PathLike) -> Path:
    directory = Path(directory)
    (directory / "series").mkdir(parents=True, exist_ok=True)

    bundle.summary.to_csv(directory / "summary.csv", index=False)
    (directory / "summary.json").write_text(
        json.dumps(
            json.loads(bundle.summary.to_json(orient="records")), indent=2
        )
        + "\n"
    )
    bundle.runs.to_csv(directory / "runs.csv", index=False)
    bundle.failures.to_csv(directory / "failures.csv", index=False)
    for name, frame in bundle.series.items():
        frame.to_csv(directory / "series" / f"{name}.csv", index=False)

    logger.info(f"Wrote report for {len(bundle.series)} runs to {directory}")
    return directory


parser = ArgumentParser(prog="report")

parser.add_argument("--input", "--in", type=str, required=True)
parser.add_argument(
    "-o", "--out", type=str | None, default=None, help="default: <in>/report"
)


def main(config: Namespace) -> int:
    source = Path(config.input)
    try:
        records = load_runs(source)
    except CorruptLogError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if not records:
        print(f"error: no runs found in {source}", file=sys.stderr)
        return EXIT_ERROR

    try:
        bundle = build_report(records)
    except GroupingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    write_report(bundle, config.out or source / "report")
    print(bundle.summary.to_string(index=False))
    return EXIT_OK
