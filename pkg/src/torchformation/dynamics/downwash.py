"""
Downwash interaction forces between quadrotors.

The controller-side model treats the wake of a vehicle above as a
momentum jet: the vertical force on the vehicle below decays
quadratically with vertical separation and has a Gaussian radial
profile whose width spreads linearly with separation. Forces from
several vehicles above are summed pairwise.

The plant-side oracle uses offset parameters and adds effects that no
controller model contains: advection of the wake by relative lateral
motion, an upward push from vehicles underneath, and coloured wake
turbulence.
"""

from dataclasses import dataclass, fields
from math import exp, sqrt
from typing import NamedTuple, TypeAlias

from jsonargparse.typing import NonNegativeFloat, PositiveFloat
import torch

from torchformation.dynamics.rigid_body import POS, VEL
from torchformation.errors import OrderingError
from torchformation.utils.torch import DTYPE

Tensor: TypeAlias = torch.Tensor


@dataclass
class DwParams:
    c0: PositiveFloat = 4.8
    z_min: PositiveFloat = 0.05
    sigma_r: PositiveFloat = 0.05
    kappa: PositiveFloat = 0.15
    alpha_nbr: PositiveFloat = 1.0

    def __post_init__(self):
        for f in fields(DwParams):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.alpha_nbr < 2 * self.z_min:
            raise ValueError("alpha_nbr must be at least 2 * z_min")


@dataclass
class PlantInteractionParams(DwParams):
    # c0 and kappa are offset from the controller defaults by +25% and +30%
    c0: PositiveFloat = 6.0
    kappa: PositiveFloat = 0.195
    below_gain: NonNegativeFloat = 0.1
    ou_sigma: NonNegativeFloat = 0.005
    ou_tau: PositiveFloat = 0.2
    vel_skew: NonNegativeFloat = 0.05

    def __post_init__(self):
        super().__post_init__()
        if not self.ou_tau > 0:
            raise ValueError("ou_tau must be positive")
        if self.below_gain < 0 or self.ou_sigma < 0:
            raise ValueError("below_gain and ou_sigma must be non-negative")

    @classmethod
    def matching(cls, dw: DwParams, **extras) -> "PlantInteractionParams":
        """Plant parameters whose jet model coincides with ``dw``."""
        base = {f.name: getattr(dw, f.name) for f in fields(DwParams)}
        return cls(**(base | extras))


class Neighbor(NamedTuple):
    id: int
    state: Tensor
    thrust: float


@dataclass(frozen=True)
class NeighborSet:
    """Vehicles within ``alpha_nbr`` of the ego vehicle, ego excluded."""

    ego_id: int
    entries: tuple[Neighbor, ...] = ()

    @classmethod
    def from_team(
        cls,
        ego_id: int,
        states: Tensor,
        thrusts: Tensor,
        alpha_nbr: float,
    ) -> "NeighborSet":
        ego_p = states[ego_id, POS]
        dist = torch.linalg.vector_norm(states[:, POS] - ego_p, dim=-1)
        entries = tuple(
            Neighbor(m, states[m], float(thrusts[m]))
            for m in range(states.shape[0])
            if m != ego_id and float(dist[m]) <= alpha_nbr
        )
        return cls(ego_id, entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [n.id for n in self.entries]

    def states(self) -> Tensor:
        if not self.entries:
            return torch.zeros(0, 10, dtype=DTYPE)
        return torch.stack([n.state for n in self.entries])

    def thrusts(self, overrides: dict[int, float] | None = None) -> Tensor:
        overrides = overrides or {}
        return torch.tensor(
            [overrides.get(n.id, n.thrust) for n in self.entries],
            dtype=DTYPE,
        )


def jet_profile(Δz: Tensor, ρ_sq: Tensor, params: DwParams) -> Tensor:
    """Dimensionless wake strength at vertical gap Δz, squared radius ρ²."""
    Δz_c = torch.clamp(Δz, min=params.z_min)
    width = params.sigma_r + params.kappa * Δz_c
    return (params.z_min / Δz_c) ** 2 * torch.exp(-0.5 * ρ_sq / width**2)


def _vertical(f_z: Tensor) -> Tensor:
    zeros = torch.zeros_like(f_z)
    return torch.stack([zeros, zeros, f_z], dim=-1)


def pairwise_dw_force(
    ego: Tensor, above: Tensor, above_thrust, params: DwParams
) -> Tensor:
    """Force (N) exerted on ``ego`` by the wake of ``above``."""
    δ = above[..., POS] - ego[..., POS]
    if bool((δ[..., 2] <= 0).any()):
        raise OrderingError("the upper vehicle must be strictly above ego")

    ρ_sq = δ[..., 0] ** 2 + δ[..., 1] ** 2
    T = torch.as_tensor(above_thrust, dtype=DTYPE)
    return _vertical(-params.c0 * T * jet_profile(δ[..., 2], ρ_sq, params))


def downwash_force(
    ego: Tensor, neighbors: Tensor, thrusts: Tensor, params: DwParams
) -> Tensor:
    """
    Pairwise sum over neighbors strictly above ego. ``ego`` has shape
    (..., 10), ``neighbors`` (M, 10) or batched as (..., M, 10), and
    ``thrusts`` (M,) or (..., M). Neighbors at or below the ego altitude
    contribute exactly zero.
    """
    if neighbors.shape[-2] == 0:
        return torch.zeros(*ego.shape[:-1], 3, dtype=ego.dtype)

    δ = neighbors[..., POS] - ego[..., None, POS]
    above = δ[..., 2] > 0
    ρ_sq = δ[..., 0] ** 2 + δ[..., 1] ** 2
    per_pair = -params.c0 * thrusts * jet_profile(δ[..., 2], ρ_sq, params)
    f_z = torch.where(above, per_pair, torch.zeros_like(per_pair)).sum(-1)
    return _vertical(f_z)


def aggregate_downwash(
    ego: Tensor,
    neighbors: NeighborSet,
    params: DwParams,
    neighbor_thrusts: dict[int, float] | None = None,
) -> Tensor:
    return downwash_force(
        ego, neighbors.states(), neighbors.thrusts(neighbor_thrusts), params
    )


def ou_step(
    n: Tensor,
    sigma: float,
    tau: float,
    dt: float,
    generator: torch.Generator | None = None,
) -> Tensor:
    """Exact discretization of an Ornstein-Uhlenbeck process."""
    decay = exp(-dt / tau)
    ξ = torch.randn(n.shape, generator=generator, dtype=n.dtype)
    return n * decay + sigma * sqrt(1 - decay**2) * ξ


def plant_interaction_force(
    ego: Tensor,
    others: Tensor,
    thrusts: Tensor,
    noise: Tensor,
    params: PlantInteractionParams,
    dt: float,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """
    Ground-truth interaction force on ``ego`` from all other vehicles.

    Returns the force and the updated turbulence state. The turbulence
    state always advances (one draw of three normals per call), but only
    acts while some vehicle is inside the neighborhood radius.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    noise = ou_step(noise, params.ou_sigma, params.ou_tau, dt, generator)

    if others.shape[0] == 0:
        return torch.zeros(3, dtype=DTYPE), noise

    δ = others[:, POS] - ego[POS]
    in_range = torch.linalg.vector_norm(δ, dim=-1) <= params.alpha_nbr

    # the wake is left behind by relative lateral motion
    δv = others[:, VEL] - ego[VEL]
    lateral = δ[:, :2] - params.vel_skew * δv[:, :2]
    ρ_sq = (lateral**2).sum(-1)

    above = in_range & (δ[:, 2] > 0)
    below = in_range & (δ[:, 2] < 0)

    down = params.c0 * thrusts * jet_profile(δ[:, 2], ρ_sq, params)
    up = (
        params.below_gain
        * params.c0
        * thrusts
        * jet_profile(-δ[:, 2], (δ[:, :2] ** 2).sum(-1), params)
    )

    zero = torch.zeros_like(down)
    f_z = torch.where(above, -down, zero) + torch.where(below, up, zero)
    force = _vertical(f_z.sum())

    if bool(in_range.any()):
        force = force + noise

    return force, noise
