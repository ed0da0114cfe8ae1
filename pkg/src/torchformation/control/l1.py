"""
L1 adaptive augmentation on the translational (velocity) subspace.

A state predictor tracks the measured velocity, a piecewise-constant
adaptation law turns the prediction error into an estimate σ̂ of the
unmodeled acceleration, and a first-order low-pass filter produces the
compensation U_σ that enters the prediction model of the MPC through its
velocity rows.
"""

from dataclasses import dataclass, field
from enum import auto

from torchformation._compat import StrEnum
from functools import cached_property
import logging
from math import exp
from typing import TypeAlias

from jsonargparse.typing import PositiveFloat
import torch

from torchformation.dynamics.rigid_body import (
    STATE_DIM,
    VEL,
    QuadParams,
    quat_to_rotation,
    rk4_step,
)
from torchformation.errors import (
    IntegrationDivergedError,
    InvalidStateError,
    L1ConfigError,
)
from torchformation.utils.linalg import is_hurwitz, mv
from torchformation.utils.torch import DTYPE, all_finite, as_tensor

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor


class CompensationSign(StrEnum):
    negated = auto()
    as_printed = auto()


@dataclass
class L1Config:
    a: float = -10.0
    A: list[list[float]] | None = None
    alpha_lpf: PositiveFloat = 40.0
    T: PositiveFloat = 0.005
    compensation_sign: CompensationSign = CompensationSign.negated

    def __post_init__(self):
        self.compensation_sign = CompensationSign(self.compensation_sign)
        if not self.alpha_lpf > 0:
            raise L1ConfigError("alpha_lpf must be positive")
        if not self.T > 0:
            raise L1ConfigError("sample period T must be positive")
        if self.A is not None and as_tensor(self.A).shape != (3, 3):
            raise L1ConfigError("A must be a 3x3 matrix")
        if not is_hurwitz(self.matrix):
            raise L1ConfigError("A must be Hurwitz")
        _ = self.gain

    @property
    def matrix(self) -> Tensor:
        if self.A is None:
            return self.a * torch.eye(3, dtype=DTYPE)
        return as_tensor(self.A)

    @cached_property
    def gain(self) -> Tensor:
        """(e^{AT} - I)⁻¹ A e^{AT}, the map from velocity error to σ̂."""
        A = self.matrix
        expAT = torch.linalg.matrix_exp(A * self.T)
        M = expAT - torch.eye(3, dtype=DTYPE)
        if torch.linalg.matrix_rank(M) < 3:
            raise L1ConfigError("e^{AT} - I is singular")
        return torch.linalg.solve(M, A @ expAT)

    @property
    def lpf_decay(self) -> float:
        return exp(-self.alpha_lpf * self.T)


@dataclass
class L1State:
    z_hat: Tensor
    sigma_hat: Tensor = field(default_factory=lambda: torch.zeros(3))
    U_sigma: Tensor = field(default_factory=lambda: torch.zeros(3))
    u_gamma_prev: float = 0.0

    def __post_init__(self):
        self.z_hat = as_tensor(self.z_hat)
        self.sigma_hat = as_tensor(self.sigma_hat)
        self.U_sigma = as_tensor(self.U_sigma)

    @classmethod
    def initial(cls, v: Tensor, u_gamma: float = 0.0) -> "L1State":
        return cls(z_hat=v.clone(), u_gamma_prev=u_gamma)


def adaptation_law(z: Tensor, z_hat: Tensor, config: L1Config) -> Tensor:
    return mv(config.gain, z - z_hat)


def predictor_step(
    state: L1State,
    v: Tensor,
    q: Tensor,
    T_d: Tensor,
    config: L1Config,
    params: QuadParams,
) -> Tensor:
    """
    Integrate the velocity predictor over one period with RK4, holding the
    measured velocity, attitude, thrust, model force and σ̂.
    """
    if abs(float(torch.linalg.vector_norm(q)) - 1) > 1e-6:
        raise InvalidStateError("predictor attitude is not a unit quaternion")

    A = config.matrix
    b = quat_to_rotation(q)[:, 2] / params.eta
    drive = (
        -params.gravity
        + T_d / params.eta
        + b * state.u_gamma_prev
        + state.sigma_hat
    )

    def f(z_hat, _):
        return drive + mv(A, z_hat - v)

    return rk4_step(f, state.z_hat, None, config.T, post=None)


def lpf_step(U_prev: Tensor, sigma_hat: Tensor, config: L1Config) -> Tensor:
    return (U_prev + sigma_hat) * config.lpf_decay - sigma_hat


def compose_f_sigma(U_sigma: Tensor) -> Tensor:
    f_sigma = torch.zeros(STATE_DIM, dtype=DTYPE)
    f_sigma[VEL] = U_sigma
    return f_sigma


class L1AdaptiveModule:
    """
    One vehicle's adaptive loop. Per control step, ``estimate`` is called
    with the new measurement before the MPC solve, and ``propagate`` after
    it with the input that is applied.
    """

    def __init__(self, config: L1Config, params: QuadParams):
        self.config = config
        self.params = params
        self.state = None

    def reset(self, v: Tensor, u_gamma: float | None = None) -> None:
        u_gamma = self.params.hover_thrust if u_gamma is None else u_gamma
        self.state = L1State.initial(v, u_gamma)

    def compensation(self) -> Tensor:
        U = self.state.U_sigma
        if self.config.compensation_sign == CompensationSign.negated:
            return -U
        return U

    def f_sigma(self) -> Tensor:
        return compose_f_sigma(self.compensation())

    def estimate(self, v: Tensor) -> Tensor:
        """Update σ̂ and U_σ from measured velocity, return f_σ."""
        if self.state is None:
            self.reset(v)
        s = self.state
        s.sigma_hat = adaptation_law(v, s.z_hat, self.config)
        s.U_sigma = lpf_step(s.U_sigma, s.sigma_hat, self.config)
        return self.f_sigma()

    def propagate(
        self, v: Tensor, q: Tensor, T_d: Tensor, u_gamma: float
    ) -> None:
        s = self.state
        s.u_gamma_prev = float(u_gamma)
        try:
            z_hat = predictor_step(s, v, q, T_d, self.config, self.params)
        except (IntegrationDivergedError, InvalidStateError) as e:
            z_hat = None
            reason = str(e)
        else:
            reason = "non-finite prediction"
        if z_hat is None or not all_finite(z_hat):
            logger.warning(f"Resetting L1 predictor: {reason}")
            s.z_hat = v.clone()
            s.sigma_hat = torch.zeros(3, dtype=DTYPE)
            return
        s.z_hat = z_hat
