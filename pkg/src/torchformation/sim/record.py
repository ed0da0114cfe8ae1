from dataclasses import dataclass, field
from typing import NamedTuple, TypeAlias

import torch

Tensor: TypeAlias = torch.Tensor

# per-vehicle time series, one row per control update
SERIES_COLUMNS = {
    "t": None,
    "p": "xyz",
    "v": "xyz",
    "q": "xyzw",
    "p_ref": "xyz",
    "v_ref": "xyz",
    "u": ("gamma", "omega_x", "omega_y", "omega_z"),
    "sigma_hat": "xyz",
    "U_sigma": "xyz",
    "force": "xyz",
    "kkt": None,
    "iterations": None,
    "active": None,
}


class Metrics(NamedTuple):
    rmse: float
    z_max: float


class Failure(NamedTuple):
    kind: str  # crash | collision | excursion
    time: float
    vehicles: tuple[int, ...]
    message: str = ""

    def __str__(self) -> str:
        who = ", ".join(str(i) for i in self.vehicles)
        return f"{self.kind} at t={self.time:.3f} s (vehicles {who})"


@dataclass
class VehicleRecord:
    role: str
    controller: str
    rate: float
    tracking_window: tuple[float, float]
    compensation_sign: str = ""
    series: dict[str, Tensor] = field(default_factory=dict)
    status: list[str] = field(default_factory=list)
    metrics: Metrics | None = None

    def __len__(self) -> int:
        return len(self.status)


@dataclass
class RunRecord:
    name: str
    seed: int
    config_hash: str
    vehicles: list[VehicleRecord]
    failure: Failure | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def vehicle(self, role: str) -> VehicleRecord:
        for v in self.vehicles:
            if v.role == role:
                return v
        raise KeyError(role)
