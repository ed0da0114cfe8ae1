"""
Tracking metrics and their aggregation over seeds.

RMSE is the root-mean-square of the 3-D position error. Both metrics are
evaluated on the tracking segment only; the hover lead-in and lead-out
are excluded.
"""

import logging
from typing import TypeAlias

import pandas as pd
import torch

from torchformation.errors import GroupingError
from torchformation.sim.record import Metrics, RunRecord
from torchformation.utils.torch import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor

# tolerance on the window edges, in seconds
WINDOW_EPS = 1e-9


def compute_metrics(
    series: dict[str, Tensor],
    window: tuple[float, float] | None = None,
) -> Metrics:
    t = series["t"]
    error = series["p"] - series["p_ref"]
    if window is not None:
        lo, hi = window
        mask = (t >= lo - WINDOW_EPS) & (t <= hi + WINDOW_EPS)
        error = error[mask]
    if error.shape[0] == 0:
        raise ValueError("no samples inside the tracking window")

    error = error.to(DTYPE)
    rmse = torch.sqrt((error**2).sum(dim=-1).mean())
    z_max = error[:, 2].abs().max()
    return Metrics(float(rmse), float(z_max))



def first_excursion(
    series: dict[str, Tensor],
    window: tuple[float, float],
    limit: float,
) -> tuple[float, float] | None:
    """Time and size of the first altitude error above ``limit``."""
    t = series["t"]
    lo, hi = window
    error = (series["p"][:, 2] - series["p_ref"][:, 2]).abs()
    inside = (t >= lo - WINDOW_EPS) & (t <= hi + WINDOW_EPS)
    over = (inside & (error > limit)).nonzero().flatten()
    if over.numel() == 0:
        return None
    k = int(over[0])
    return float(t[k]), float(error[k])


def metrics_table(records: list[RunRecord]) -> pd.DataFrame:
    """One row per (run, vehicle), failed runs included with NaN metrics."""
    rows = []
    for record in records:
        for vehicle in record.vehicles:
            metrics = vehicle.metrics or Metrics(float("nan"), float("nan"))
            rows.append(
                {
                    "name": record.name,
                    "config_hash": record.config_hash,
                    "seed": record.seed,
                    "role": vehicle.role,
                    "controller": vehicle.controller,
                    "failed": record.failed,
                    "failure": str(record.failure or ""),
                    "rmse": metrics.rmse,
                    "z_max": metrics.z_max,
                }
            )
    return pd.DataFrame(rows)


def aggregate_stats(records: list[RunRecord]) -> pd.DataFrame:
    """
    Sample mean and standard deviation (n - 1 denominator) of rmse and
    z_max, grouped by scenario name and vehicle role. Failed runs do not
    enter the statistics and are counted in ``n_failed``.

    All records sharing a scenario name must share the same config hash.
    """
    if not records:
        raise GroupingError("no records to aggregate")

    hashes = {}
    for record in records:
        known = hashes.setdefault(record.name, record.config_hash)
        if known != record.config_hash:
            raise GroupingError(
                f"records named '{record.name}' have different configs "
                f"({known[:12]} vs {record.config_hash[:12]})"
            )

    table = metrics_table(records)
    keys = ["name", "role", "controller"]

    rows = []
    for key, group in table.groupby(keys, sort=False):
        ok = group[~group["failed"]]
        row = dict(zip(keys, key))
        for metric in ("rmse", "z_max"):
            row[f"{metric}_mean"] = ok[metric].mean()
            # a single run has no sample spread
            row[f"{metric}_std"] = (
                ok[metric].std(ddof=1) if len(ok) > 1 else 0.0
            )
        row["n_runs"] = len(ok)
        row["n_failed"] = len(group) - len(ok)
        rows.append(row)

    return pd.DataFrame(rows)
