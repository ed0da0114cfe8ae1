"""
Scenario configuration: formation geometry, reference trajectories,
per-vehicle controller assignment and plant settings.

Scenario files are YAML documents parsed into these dataclasses by
``jsonargparse``, which rejects unknown keys and coerces types.
"""

from argparse import ArgumentError
from dataclasses import asdict, dataclass, field, replace
from enum import auto

from torchformation._compat import StrEnum
import hashlib
import json
import logging
from math import cos, pi, sin, sqrt
from os import PathLike
from pathlib import Path
from typing import TypeAlias

from jsonargparse import ArgumentParser
from jsonargparse.typing import NonNegativeFloat, PositiveFloat
import torch
import yaml

from torchformation.control.l1 import L1Config
from torchformation.control.ocp import OcpConfig
from torchformation.dynamics.downwash import DwParams, PlantInteractionParams
from torchformation.dynamics.rigid_body import IDENTITY_QUATERNION, QuadParams
from torchformation.errors import ConfigError
from torchformation.knode.hybrid import ModelVariant
from torchformation.utils.torch import DTYPE, as_tensor

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor

ROLES = ("bottom", "center", "top")


class FormationKind(StrEnum):
    v_stack = auto()
    i_stack = auto()


class TrajectoryKind(StrEnum):
    line = auto()
    hover = auto()
    lemniscate = auto()


class ControllerVariant(StrEnum):
    mpc = auto()
    dw_mpc = auto()
    knode_dw_mpc = auto()
    l1_mpc = auto()
    l1_dw_mpc = auto()
    l1_knode_dw_mpc = auto()

    @property
    def adaptive(self) -> bool:
        return self.startswith("l1_")

    @property
    def model_variant(self) -> ModelVariant:
        base = self.removeprefix("l1_").removesuffix("_mpc")
        return ModelVariant.nominal if base == "mpc" else ModelVariant(base)

    @property
    def needs_weights(self) -> bool:
        return self.model_variant == ModelVariant.knode_dw


@dataclass
class Formation:
    kind: FormationKind = FormationKind.i_stack
    z1: PositiveFloat = 0.2
    z2: PositiveFloat = 0.4
    r: NonNegativeFloat = 0.0

    def __post_init__(self):
        self.kind = FormationKind(self.kind)
        if not (self.z1 > 0 and self.z2 > 0):
            raise ValueError("vertical gaps z1, z2 must be positive")
        if self.r < 0:
            raise ValueError("horizontal gap r must be non-negative")
        if self.kind == FormationKind.i_stack:
            self.r = 0.0


def formation_offsets(f: Formation) -> Tensor:
    """Offsets from the bottom vehicle's reference, rows bottom/center/top."""
    return as_tensor(
        [
            [0.0, 0.0, 0.0],
            [-f.r / 2, 0.0, f.z2],
            [f.r / 2, 0.0, f.z2 + f.z1],
        ]
    )


def trapezoid(t: float, distance: float, v_max: float, a_max: float):
    """
    Arc length and speed at time ``t`` along a rest-to-rest trapezoidal
    profile, falling back to a triangle when ``v_max`` is not reached.
    """
    if distance <= 0:
        return 0.0, 0.0
    v_peak = min(v_max, sqrt(distance * a_max))
    t_ramp = v_peak / a_max
    d_ramp = 0.5 * a_max * t_ramp**2
    t_cruise = (distance - 2 * d_ramp) / v_peak
    t_total = 2 * t_ramp + t_cruise

    if t <= 0:
        return 0.0, 0.0
    if t < t_ramp:
        return 0.5 * a_max * t**2, a_max * t
    if t < t_ramp + t_cruise:
        return d_ramp + v_peak * (t - t_ramp), v_peak
    if t < t_total:
        τ = t_total - t
        return distance - 0.5 * a_max * τ**2, a_max * τ
    return distance, 0.0


def trapezoid_duration(distance: float, v_max: float, a_max: float) -> float:
    if distance <= 0:
        return 0.0
    v_peak = min(v_max, sqrt(distance * a_max))
    return v_peak / a_max + distance / v_peak


@dataclass
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.line
    start: tuple[float, float] = (0.0, 0.0)
    altitude: PositiveFloat = 1.0
    hover_before: NonNegativeFloat = 3.0
    hover_after: NonNegativeFloat = 3.0
    length: NonNegativeFloat = 2.0
    speed: PositiveFloat = 0.5
    accel: PositiveFloat = 0.5
    heading: float = 0.0
    laps: PositiveFloat = 1.0

    def __post_init__(self):
        try:
            self.kind = TrajectoryKind(self.kind)
        except ValueError as e:
            raise ConfigError(f"unknown trajectory kind '{self.kind}'") from e
        if not (self.speed > 0 and self.accel > 0):
            raise ValueError("speed and accel must be positive")
        if self.kind == TrajectoryKind.lemniscate and not self.length > 0:
            raise ValueError("a lemniscate needs a positive size (length)")

    @property
    def path_length(self) -> float:
        """Distance travelled along the path (in radians of phase for
        the lemniscate, whose size is ``length``)."""
        if self.kind == TrajectoryKind.line:
            return self.length
        if self.kind == TrajectoryKind.lemniscate:
            return 2 * pi * self.laps
        return 0.0

    def _rate_limits(self) -> tuple[float, float]:
        if self.kind == TrajectoryKind.lemniscate:
            return self.speed / self.length, self.accel / self.length
        return self.speed, self.accel

    @property
    def motion_time(self) -> float:
        return trapezoid_duration(self.path_length, *self._rate_limits())

    @property
    def duration(self) -> float:
        return self.hover_before + self.motion_time + self.hover_after

    @property
    def tracking_window(self) -> tuple[float, float]:
        """Interval scored by the metrics, hover bookends excluded."""
        if self.kind == TrajectoryKind.hover:
            return 0.0, self.duration
        return self.hover_before, self.hover_before + self.motion_time


def reference_trajectory(spec: TrajectorySpec, t: float) -> Tensor:
    """
    Desired state at time ``t``: position, velocity and identity attitude.
    Beyond the end of the trajectory the final hover point is held.
    """
    if t < 0:
        raise ValueError(f"reference requested at negative time {t}")

    x0, y0 = spec.start
    p = [x0, y0, spec.altitude]
    v = [0.0, 0.0, 0.0]

    if spec.kind != TrajectoryKind.hover and spec.path_length > 0:
        s, ds = trapezoid(
            t - spec.hover_before, spec.path_length, *spec._rate_limits()
        )
        if spec.kind == TrajectoryKind.line:
            c, sn = cos(spec.heading), sin(spec.heading)
            p = [x0 + s * c, y0 + s * sn, spec.altitude]
            v = [ds * c, ds * sn, 0.0]
        else:
            # Gerono lemniscate, starting at its crossing point
            a = spec.length
            p = [x0 + a * sin(s), y0 + 0.5 * a * sin(2 * s), spec.altitude]
            v = [a * cos(s) * ds, a * cos(2 * s) * ds, 0.0]

    return as_tensor(p + v + list(IDENTITY_QUATERNION))


@dataclass
class VehicleConfig:
    """
    One vehicle. The L1 sample period always follows ``rate``. A vehicle
    may follow its own ``trajectory`` instead of the scenario's.
    """

    controller: ControllerVariant = ControllerVariant.mpc
    rate: PositiveFloat = 400.0
    dw: DwParams = field(default_factory=DwParams)
    l1: L1Config = field(default_factory=L1Config)
    weights: str | None = None
    trajectory: TrajectorySpec | None = None

    def __post_init__(self):
        self.controller = ControllerVariant(self.controller)
        if not self.rate > 0:
            raise ValueError("control rate must be positive")
        if self.l1.T != 1 / self.rate:
            self.l1 = replace(self.l1, T=1 / self.rate)


@dataclass
class PlantConfig:
    rate: PositiveFloat = 2000.0
    quad: QuadParams = field(default_factory=QuadParams)
    interaction: PlantInteractionParams = field(
        default_factory=PlantInteractionParams
    )
    position_noise: bool = False
    noise_std: PositiveFloat = 1e-3


def default_vehicles() -> list[VehicleConfig]:
    return [
        VehicleConfig(rate=200.0),
        VehicleConfig(rate=400.0),
        VehicleConfig(rate=400.0),
    ]


@dataclass
class Scenario:
    name: str = "scenario"
    formation: Formation = field(default_factory=Formation)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    vehicles: list[VehicleConfig] = field(default_factory=default_vehicles)
    plant: PlantConfig = field(default_factory=PlantConfig)
    solver: OcpConfig = field(default_factory=OcpConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    duration: PositiveFloat | None = None
    # altitude error that counts as a failed run
    z_limit: PositiveFloat | None = None

    def __post_init__(self):
        if not 1 <= len(self.vehicles) <= len(ROLES):
            raise ValueError(
                f"a scenario has between 1 and {len(ROLES)} vehicles"
            )
        for i, vehicle in enumerate(self.vehicles):
            ratio = self.plant.rate / vehicle.rate
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(
                    f"vehicle {i} rate {vehicle.rate} Hz does not divide "
                    f"the plant rate {self.plant.rate} Hz"
                )
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.z_limit is not None and not self.z_limit > 0:
            raise ValueError("z_limit must be positive")

    @property
    def run_duration(self) -> float:
        if self.duration is not None:
            return self.duration
        return max(self.vehicle_trajectory(i).duration for i in self.ids)

    @property
    def ids(self) -> range:
        return range(len(self.vehicles))

    def role(self, i: int) -> str:
        return ROLES[i]

    def vehicle_trajectory(self, i: int) -> TrajectorySpec:
        return self.vehicles[i].trajectory or self.trajectory

    def reference(self, i: int, t: float) -> Tensor:
        ref = reference_trajectory(self.vehicle_trajectory(i), t)
        ref[:3] += formation_offsets(self.formation)[i]
        return ref

    @property
    def tracking_window(self) -> tuple[float, float]:
        return self.trajectory.tracking_window


def config_hash(scenario: Scenario) -> str:
    """SHA-256 of the canonical JSON of a scenario, seeds excluded."""
    content = asdict(scenario)
    content.pop("seeds")
    canonical = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def scenario_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="scenario", exit_on_error=False)
    parser.add_argument("--scenario", type=Scenario)
    return parser


def resolve_weights(scenario: Scenario, root: Path | None = None) -> None:
    """Check that every KNODE vehicle has an existing weights file."""
    for i, vehicle in enumerate(scenario.vehicles):
        who = f"vehicle {i} ({scenario.role(i)}, {vehicle.controller})"
        if not vehicle.controller.needs_weights:
            continue
        if vehicle.weights is None:
            raise ConfigError(f"{who} requires a weights file")
        path = Path(vehicle.weights)
        if not path.is_absolute() and root is not None:
            path = root / path
        if not path.is_file():
            raise ConfigError(f"{who}: weights file {path} not found")
        vehicle.weights = str(path.resolve())


def load_scenario(path: str | PathLike) -> Scenario:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError("file not found", str(path)) from e
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        raise ConfigError(
            str(e.problem), str(path), mark.line + 1, mark.column + 1
        ) from e

    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping at top level", str(path))

    parser = scenario_parser()
    try:
        config = parser.parse_object({"scenario": raw})
        scenario = parser.instantiate_classes(config).scenario
    except (ArgumentError, ValueError, TypeError) as e:
        raise ConfigError(str(e), str(path)) from e

    resolve_weights(scenario, root=path.parent)
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario


def initial_states(scenario: Scenario) -> Tensor:
    return torch.stack(
        [scenario.reference(i, 0.0) for i in scenario.ids]
    ).to(DTYPE)
