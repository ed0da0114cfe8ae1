"""
Nominal quadrotor rigid-body dynamics.

States are float64 tensors of shape (..., 10) laid out as position,
velocity and unit quaternion (q_x, q_y, q_z, q_w, body to world). Inputs
are tensors of shape (..., 4): collective thrust (N) followed by commanded
body rates (rad/s). All functions broadcast over leading batch dimensions.
"""

from dataclasses import dataclass
from math import sqrt
from typing import Callable, NamedTuple, TypeAlias

from jsonargparse.typing import PositiveFloat
import torch

from torchformation.errors import IntegrationDivergedError, InvalidStateError
from torchformation.utils.linalg import mv
from torchformation.utils.torch import DTYPE, all_finite, as_tensor

Tensor: TypeAlias = torch.Tensor
Dynamics: TypeAlias = Callable[[Tensor, Tensor], Tensor]

STATE_DIM = 10
INPUT_DIM = 4

POS = slice(0, 3)
VEL = slice(3, 6)
QUAT = slice(6, 10)

THRUST = 0
RATES = slice(1, 4)

IDENTITY_QUATERNION = (0.0, 0.0, 0.0, 1.0)


class QuadState(NamedTuple):
    p: Tensor
    v: Tensor
    q: Tensor

    @classmethod
    def from_tensor(cls, x: Tensor) -> "QuadState":
        return cls(x[..., POS], x[..., VEL], x[..., QUAT])

    @classmethod
    def at_rest(cls, position) -> "QuadState":
        return cls(
            as_tensor(position),
            torch.zeros(3, dtype=DTYPE),
            as_tensor(IDENTITY_QUATERNION),
        )

    def as_tensor(self) -> Tensor:
        return torch.cat([self.p, self.v, self.q], dim=-1)


class ControlInput(NamedTuple):
    u_gamma: Tensor
    omega: Tensor

    @classmethod
    def from_tensor(cls, u: Tensor) -> "ControlInput":
        return cls(u[..., THRUST], u[..., RATES])

    def as_tensor(self) -> Tensor:
        return torch.cat([self.u_gamma.unsqueeze(-1), self.omega], dim=-1)


@dataclass
class QuadParams:
    """Physical parameters, defaults for a 34 g, 0.1 m quadrotor."""

    eta: PositiveFloat = 0.034
    g: tuple[float, float, float] = (0.0, 0.0, 9.81)
    diameter: PositiveFloat = 0.1
    u_max: PositiveFloat = 0.6
    omega_max: PositiveFloat = 10.0

    def __post_init__(self):
        if not (self.eta > 0 and self.diameter > 0):
            raise ValueError("mass and diameter must be positive")
        g_norm = sqrt(sum(gi * gi for gi in self.g))
        if not self.u_max > self.eta * g_norm:
            raise ValueError(
                f"u_max={self.u_max} N cannot hold hover "
                f"({self.eta * g_norm:.4f} N)"
            )

    @property
    def gravity(self) -> Tensor:
        return as_tensor(self.g)

    @property
    def hover_thrust(self) -> float:
        return self.eta * float(torch.linalg.vector_norm(self.gravity))

    def hover_input(self) -> Tensor:
        return as_tensor([self.hover_thrust, 0.0, 0.0, 0.0])

    def input_lower(self) -> Tensor:
        ω = self.omega_max
        return as_tensor([0.0, -ω, -ω, -ω])

    def input_upper(self) -> Tensor:
        ω = self.omega_max
        return as_tensor([self.u_max, ω, ω, ω])

    def clip_input(self, u: Tensor) -> Tensor:
        return torch.clamp(u, self.input_lower(), self.input_upper())


def check_state(x: Tensor, tol: float = 1e-6) -> None:
    """Raise unless ``x`` is finite with a unit quaternion."""
    if not all_finite(x):
        raise InvalidStateError("state has non-finite components")
    norm = torch.linalg.vector_norm(x[..., QUAT], dim=-1)
    if bool(((norm - 1).abs() > tol).any()):
        raise InvalidStateError(
            f"quaternion norm {float(norm.max()):.3g} is not unit"
        )


def quat_to_rotation(q: Tensor) -> Tensor:
    """Body to world rotation matrix, shape (..., 3, 3)."""
    n_sq = (q * q).sum(dim=-1)
    if bool((n_sq < 1e-12).any()):
        raise InvalidStateError("quaternion is (near) zero")

    x, y, z, w = q.unbind(dim=-1)
    s = 2 / n_sq

    rows = [
        [1 - s * (y * y + z * z), s * (x * y - z * w), s * (x * z + y * w)],
        [s * (x * y + z * w), 1 - s * (x * x + z * z), s * (y * z - x * w)],
        [s * (x * z - y * w), s * (y * z + x * w), 1 - s * (x * x + y * y)],
    ]
    return torch.stack([torch.stack(row, dim=-1) for row in rows], dim=-2)


def g_matrix(q: Tensor) -> Tensor:
    """
    The 3x4 matrix G(q) mapping body rates to quaternion derivatives,
    q̇ = ½ G(q)ᵀ ω. Each row is orthogonal to q.
    """
    x, y, z, w = q.unbind(dim=-1)
    rows = [
        [w, z, -y, -x],
        [-z, w, x, -y],
        [y, -x, w, -z],
    ]
    return torch.stack([torch.stack(row, dim=-1) for row in rows], dim=-2)


def f_nom(x: Tensor, u: Tensor, params: QuadParams) -> Tensor:
    """Continuous-time nominal dynamics, returns ẋ with the shape of x."""
    if not all_finite(x, u):
        raise InvalidStateError("non-finite state or input")

    q = x[..., QUAT]
    R = quat_to_rotation(q)

    p_dot = x[..., VEL]
    v_dot = -params.gravity + (1 / params.eta) * R[..., :, 2] * u[
        ..., THRUST
    ].unsqueeze(-1)
    q_dot = 0.5 * mv(g_matrix(q).transpose(-2, -1), u[..., RATES])

    return torch.cat([p_dot, v_dot, q_dot], dim=-1)


def normalize_quaternion(x: Tensor) -> Tensor:
    """Renormalize the quaternion part and fix the sign so that q_w ≥ 0."""
    q = x[..., QUAT]
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    q = torch.where(q[..., 3:4] < 0, -q, q)
    return torch.cat([x[..., :6], q], dim=-1)


def rk4_step(
    f: Dynamics,
    x: Tensor,
    u: Tensor,
    dt: float,
    post: Callable[[Tensor], Tensor] | None = normalize_quaternion,
) -> Tensor:
    """
    Classical fourth-order Runge-Kutta step with zero-order-hold input.

    ``post`` is applied to the result; by default it renormalizes the
    quaternion. Pass ``post=None`` for generic (non-quadrotor) states or
    for smooth prediction maps.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    try:
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
    except InvalidStateError as e:
        raise IntegrationDivergedError(f"RK4 stage failed: {e}") from e

    x_next = x + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    if not all_finite(x_next):
        raise IntegrationDivergedError("RK4 step produced non-finite state")

    return x_next if post is None else post(x_next)


def hover_state(position) -> Tensor:
    return QuadState.at_rest(position).as_tensor()
