"""
Two-vehicle training data for the residual network.

Two formations are flown under nominal MPC on the plant:

    static_top  the ego vehicle flies a straight line underneath a second
                vehicle hovering above the midpoint of the line;
    stacked     both vehicles fly the same line, vertically aligned.

Each run yields one segment: the ego vehicle's states and inputs at the
control rate, its partner's states and thrust, and the plant interaction
force acting on the ego.
"""

from dataclasses import dataclass, field, replace
from enum import auto

from torchformation._compat import StrEnum
import logging
from math import cos, sin
from typing import NamedTuple, TypeAlias

from jsonargparse.typing import PositiveFloat
import torch
from tqdm import tqdm

from torchformation.control.ocp import OcpConfig
from torchformation.dynamics.downwash import DwParams, downwash_force
from torchformation.dynamics.rigid_body import POS, VEL
from torchformation.errors import ContractError
from torchformation.knode.hybrid import HybridModel
from torchformation.sim.record import RunRecord
from torchformation.sim.runner import run_scenario
from torchformation.sim.scenario import (
    ControllerVariant,
    Formation,
    FormationKind,
    PlantConfig,
    Scenario,
    TrajectoryKind,
    TrajectorySpec,
    VehicleConfig,
)
from torchformation.utils.torch import all_finite

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor


class TrainingScenario(StrEnum):
    static_top = auto()
    stacked = auto()
    both = auto()

    def expand(self) -> list["TrainingScenario"]:
        if self == TrainingScenario.both:
            return [TrainingScenario.static_top, TrainingScenario.stacked]
        return [self]


class Segment(NamedTuple):
    states: Tensor  # (L, 10)
    inputs: Tensor  # (L, 4)
    neighbors: Tensor  # (L, M, 10)
    thrusts: Tensor  # (L, M)
    forces: Tensor  # (L, 3)

    @property
    def length(self) -> int:
        return self.states.shape[0]


class Windows(NamedTuple):
    """Overlapping windows of H + 1 samples stacked along a batch axis."""

    states: Tensor  # (W, H + 1, 10)
    inputs: Tensor  # (W, H, 4)
    neighbors: Tensor  # (W, H, M, 10)
    thrusts: Tensor  # (W, H, M)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[1]


@dataclass
class TrainingSet:
    segments: list[Segment]
    dt: PositiveFloat

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError("segment sample period must be positive")
        for i, s in enumerate(self.segments):
            L = s.length
            if not (
                s.inputs.shape[0] == s.neighbors.shape[0] == L
                and s.thrusts.shape[0] == s.forces.shape[0] == L
            ):
                raise ContractError(f"segment {i} has ragged series")
            if not all_finite(*s):
                raise ContractError(f"segment {i} contains non-finite values")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def n_samples(self) -> int:
        return sum(s.length for s in self.segments)

    def windows(self, horizon: int) -> Windows:
        parts = []
        for s in self.segments:
            if s.length < horizon + 1:
                continue
            starts = torch.arange(s.length - horizon).unsqueeze(1)
            idx = starts + torch.arange(horizon + 1)
            parts.append(
                Windows(
                    states=s.states[idx],
                    inputs=s.inputs[idx[:, :-1]],
                    neighbors=s.neighbors[idx[:, :-1]],
                    thrusts=s.thrusts[idx[:, :-1]],
                )
            )
        if not parts:
            raise ContractError(
                f"no segment has the {horizon + 1} samples a window needs"
            )
        return Windows(*(torch.cat(p) for p in zip(*parts)))

    def flat(self) -> Segment:
        return Segment(*(torch.cat(p) for p in zip(*self.segments)))


def park_out_of_range(
    ego: Tensor, neighbors: Tensor, alpha_nbr: float
) -> Tensor:
    """
    Replace neighbors farther than ``alpha_nbr`` by a vehicle parked far
    below the ego, which no interaction model can feel. Keeps the number of
    neighbors fixed across a batch.
    """
    δ = neighbors[..., POS] - ego[..., None, POS]
    far = torch.linalg.vector_norm(δ, dim=-1) > alpha_nbr
    parked = ego.unsqueeze(-2).expand_as(neighbors).clone()
    parked[..., 2] -= 10 * alpha_nbr
    parked[..., VEL] = 0.0
    return torch.where(far.unsqueeze(-1), parked, neighbors)


@dataclass
class DataConfig:
    scenario: TrainingScenario = TrainingScenario.both
    gaps: list[PositiveFloat] = field(default_factory=lambda: [0.2, 0.3])
    trajectory: TrajectorySpec = field(
        default_factory=lambda: TrajectorySpec(
            hover_before=1.0, hover_after=1.0
        )
    )
    rate: PositiveFloat = 200.0
    # holds the commanded gaps so samples cover the intended separations
    controller: ControllerVariant = ControllerVariant.l1_dw_mpc
    plant: PlantConfig = field(default_factory=PlantConfig)
    solver: OcpConfig = field(default_factory=OcpConfig)
    alpha_nbr: PositiveFloat = DwParams().alpha_nbr

    def __post_init__(self):
        self.scenario = TrainingScenario(self.scenario)
        self.controller = ControllerVariant(self.controller)
        if self.controller.needs_weights:
            raise ValueError("training flights cannot use a learned model")
        if not self.gaps:
            raise ValueError("at least one vertical gap is required")


def training_scenario(
    kind: TrainingScenario, gap: float, config: DataConfig
) -> Scenario:
    """The two-vehicle scenario of one training formation, ego first."""
    line = config.trajectory
    if line.kind != TrajectoryKind.line:
        raise ContractError("training formations fly a straight line")
    ego = VehicleConfig(config.controller, rate=config.rate)
    partner = VehicleConfig(config.controller, rate=config.rate)

    if kind == TrainingScenario.static_top:
        half = 0.5 * line.length
        x0, y0 = line.start
        partner = replace(
            partner,
            trajectory=TrajectorySpec(
                kind=TrajectoryKind.hover,
                start=(
                    x0 + half * cos(line.heading),
                    y0 + half * sin(line.heading),
                ),
                altitude=line.altitude,
                hover_before=line.duration,
                hover_after=0.0,
            ),
        )

    return Scenario(
        name=f"{kind}_gap{gap:g}",
        formation=Formation(FormationKind.i_stack, z1=gap, z2=gap),
        trajectory=line,
        vehicles=[ego, partner],
        plant=config.plant,
        solver=config.solver,
        seeds=[],
    )


def segment_from_record(record: RunRecord, alpha_nbr: float) -> Segment:
    ego, partner = record.vehicles
    if len(ego) != len(partner):
        raise ContractError("ego and partner must share a control rate")

    def state(series):
        return torch.cat([series["p"], series["v"], series["q"]], dim=-1)

    # the force logged at an update acted over the preceding plant tick,
    # so the force over interval k is the one logged at update k + 1
    states = state(ego.series)[:-1]
    neighbors = park_out_of_range(
        states, state(partner.series)[:-1].unsqueeze(-2), alpha_nbr
    )
    return Segment(
        states=states,
        inputs=ego.series["u"][:-1],
        neighbors=neighbors,
        thrusts=partner.series["u"][:-1, :1],
        forces=ego.series["force"][1:],
    )


def generate_training_data(
    config: DataConfig,
    seeds: list[int],
    progress_bar: bool = False,
) -> TrainingSet:
    """
    Fly every (formation, gap, seed) combination. Runs that crash or
    collide are dropped with a warning.
    """
    jobs = [
        (training_scenario(kind, gap, config), seed)
        for kind in config.scenario.expand()
        for gap in config.gaps
        for seed in seeds
    ]
    segments = []
    for scenario, seed in tqdm(
        jobs, desc="Training data", disable=not progress_bar
    ):
        record = run_scenario(scenario, seed)
        if record.failed:
            logger.warning(
                f"Dropping segment {scenario.name} seed {seed}: "
                f"{record.failure}"
            )
            continue
        segments.append(segment_from_record(record, config.alpha_nbr))

    logger.info(
        f"Generated {len(segments)} of {len(jobs)} training segments"
    )
    return TrainingSet(segments, dt=1 / config.rate)


def residual_targets(data: TrainingSet, dw: DwParams) -> Tensor:
    """Plant interaction force minus the downwash model, shape (L, 3)."""
    flat = data.flat()
    return flat.forces - downwash_force(
        flat.states, flat.neighbors, flat.thrusts, dw
    )


def unroll(model: HybridModel, windows: Windows, dt: float) -> Tensor:
    """Predicted states x_1..x_H of every window, shape (W, H, 10)."""
    x = windows.states[:, 0]
    predicted = []
    for j in range(windows.horizon):
        x = model.step(
            x,
            windows.inputs[:, j],
            windows.neighbors[:, j],
            windows.thrusts[:, j],
            dt,
        )
        predicted.append(x)
    return torch.stack(predicted, dim=1)


def evaluate_prediction(
    data: TrainingSet, model: HybridModel, horizon: int = 5
) -> float:
    """RMSE of the predicted velocity over steps 1..H of every window."""
    windows = data.windows(horizon)
    with torch.no_grad():
        predicted = unroll(model, windows, data.dt)
    error = predicted[..., VEL] - windows.states[:, 1:, VEL]
    return float(torch.sqrt((error**2).sum(-1).mean()))

