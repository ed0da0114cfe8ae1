"""
Prediction models: nominal dynamics plus a downwash term built either
from the physics model alone (DW) or from the physics model plus a
learned residual (KNODE-DW). Residuals are evaluated per pair and summed,
so that a model trained on two vehicles applies to larger teams.
"""

from dataclasses import dataclass, field
from enum import auto

from torchformation._compat import StrEnum
from typing import NamedTuple, TypeAlias

import torch

from torchformation.dynamics.downwash import DwParams, downwash_force
from torchformation.dynamics.rigid_body import (
    POS,
    VEL,
    QuadParams,
    f_nom,
    rk4_step,
)
from torchformation.errors import ContractError
from torchformation.knode.nn import Mlp

Tensor: TypeAlias = torch.Tensor

N_FEATURES = 8


class ModelVariant(StrEnum):
    nominal = auto()
    dw = auto()
    knode_dw = auto()


class DwFeatures(NamedTuple):
    values: Tensor
    active: Tensor


def dw_features(
    ego: Tensor, neighbors: Tensor, thrusts: Tensor, hover_thrust: float
) -> DwFeatures:
    """
    Per-pair residual inputs, shape (..., M, 8): relative position and
    velocity of the neighbor, ego vertical speed and the neighbor thrust
    relative to hover. Pairs whose neighbor is not strictly above the ego
    are inactive and carry zero features.
    """
    M = neighbors.shape[-2]
    δp = neighbors[..., POS] - ego[..., None, POS]
    δv = neighbors[..., VEL] - ego[..., None, VEL]
    v_z = ego[..., None, 5:6].expand(*δp.shape[:-1], 1)
    T = (thrusts / hover_thrust).expand(*δp.shape[:-1]).unsqueeze(-1)

    values = torch.cat([δp, δv, v_z, T], dim=-1)
    active = δp[..., 2] > 0
    values = torch.where(active.unsqueeze(-1), values, 0.0)
    assert values.shape[-2:] == (M, N_FEATURES)
    return DwFeatures(values, active)


def knode_residual(features: DwFeatures, mlp: Mlp) -> Tensor:
    """Residual force (N) for each pair, exactly zero for inactive pairs."""
    out = mlp(features.values)
    return torch.where(features.active.unsqueeze(-1), out, 0.0)


@dataclass
class HybridModel:
    variant: ModelVariant = ModelVariant.nominal
    params: QuadParams = field(default_factory=QuadParams)
    dw: DwParams = field(default_factory=DwParams)
    mlp: Mlp | None = None

    def __post_init__(self):
        self.variant = ModelVariant(self.variant)
        if self.variant == ModelVariant.knode_dw and self.mlp is None:
            raise ContractError("the knode_dw model requires trained weights")
        if self.variant != ModelVariant.knode_dw and self.mlp is not None:
            raise ContractError(f"the {self.variant} model takes no weights")

    def interaction_force(
        self, x: Tensor, neighbors: Tensor, thrusts: Tensor
    ) -> Tensor:
        no_neighbors = neighbors.shape[-2] == 0
        if self.variant == ModelVariant.nominal or no_neighbors:
            return torch.zeros(*x.shape[:-1], 3, dtype=x.dtype)

        force = downwash_force(x, neighbors, thrusts, self.dw)

        if self.variant == ModelVariant.knode_dw:
            features = dw_features(
                x, neighbors, thrusts, self.params.hover_thrust
            )
            force = force + knode_residual(features, self.mlp).sum(dim=-2)

        return force

    def dynamics(
        self,
        x: Tensor,
        u: Tensor,
        neighbors: Tensor,
        thrusts: Tensor,
        accel: Tensor | None = None,
    ) -> Tensor:
        """ẋ = f_nom + f_d (+ f_σ when ``accel`` is given)."""
        xdot = f_nom(x, u, self.params)
        if self.variant == ModelVariant.nominal and accel is None:
            return xdot

        a = self.interaction_force(x, neighbors, thrusts) / self.params.eta
        if accel is not None:
            a = a + accel
        return torch.cat(
            [xdot[..., :3], xdot[..., 3:6] + a, xdot[..., 6:]], dim=-1
        )

    def step(
        self,
        x: Tensor,
        u: Tensor,
        neighbors: Tensor,
        thrusts: Tensor,
        dt: float,
        accel: Tensor | None = None,
    ) -> Tensor:
        """One RK4 step of the prediction model (no renormalization)."""

        def f(x, u):
            return self.dynamics(x, u, neighbors, thrusts, accel)

        return rk4_step(f, x, u, dt, post=None)
