"""
Optimal control problem: discretization, linearization and dense
condensing of the receding-horizon tracking problem.

The problem is written in deviation variables about a nominal trajectory
(x̄_j, ū_j). Linearizing the RK4-discretized prediction model F gives

    δx_{j+1} = A_j δx_j + B_j δu_j + c_j,  c_j = F(x̄_j, ū_j) - x̄_{j+1},

and eliminating the states leaves a QP in the stacked input deviations,
plus one slack per finite state-bound row.
"""

from dataclasses import dataclass
import logging
from typing import NamedTuple, TypeAlias

from jsonargparse.typing import NonNegativeFloat, PositiveFloat, PositiveInt
import torch

from torchformation.control.qp import QpProblem
from torchformation.dynamics.rigid_body import (
    INPUT_DIM,
    STATE_DIM,
    VEL,
)
from torchformation.errors import (
    ContractError,
    IntegrationDivergedError,
    LinearizationError,
)
from torchformation.knode.hybrid import HybridModel
from torchformation.utils.linalg import block_diag_repeat, mv
from torchformation.utils.torch import DTYPE, all_finite, as_tensor

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor

# the prediction model is the hybrid model, optionally fed a compensation
PredictionModel: TypeAlias = HybridModel


@dataclass
class OcpConfig:
    """
    Horizon and weights. ``T`` is the spacing of the prediction grid and
    is independent of the rate at which the controller fires, so the
    horizon covers ``N * T`` seconds for every vehicle.
    """

    N: PositiveInt = 20
    T: PositiveFloat = 0.02
    q_position: NonNegativeFloat = 40.0
    q_velocity: NonNegativeFloat = 4.0
    q_quaternion: NonNegativeFloat = 8.0
    r_thrust: PositiveFloat = 800.0
    r_rates: PositiveFloat = 0.2
    terminal_scale: NonNegativeFloat = 5.0
    altitude_floor: float | None = 0.0
    state_lower: list[float] | None = None
    state_upper: list[float] | None = None
    slack_linear: NonNegativeFloat = 1e3
    slack_quadratic: PositiveFloat = 1.0
    fd_step: PositiveFloat = 1e-6

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if not self.T > 0:
            raise ValueError("sample period T must be positive")
        for bound in (self.state_lower, self.state_upper):
            if bound is not None and len(bound) != STATE_DIM:
                raise ValueError(f"state bounds need {STATE_DIM} entries")
        lower, upper = self.state_box()
        if bool((lower > upper).any()):
            raise ValueError("state box is empty")

    @property
    def Q(self) -> Tensor:
        return torch.diag(
            as_tensor(
                [self.q_position] * 3
                + [self.q_velocity] * 3
                + [self.q_quaternion] * 4
            )
        )

    @property
    def R(self) -> Tensor:
        return torch.diag(as_tensor([self.r_thrust] + [self.r_rates] * 3))

    @property
    def P(self) -> Tensor:
        return self.terminal_scale * self.Q

    def state_box(self) -> tuple[Tensor, Tensor]:
        """Box X, also used as the terminal set."""
        inf = float("inf")
        lower = (
            as_tensor(self.state_lower)
            if self.state_lower is not None
            else torch.full((STATE_DIM,), -inf, dtype=DTYPE)
        )
        upper = (
            as_tensor(self.state_upper)
            if self.state_upper is not None
            else torch.full((STATE_DIM,), inf, dtype=DTYPE)
        )
        if self.altitude_floor is not None:
            lower = lower.clone()
            lower[2] = max(float(lower[2]), self.altitude_floor)
        return lower, upper


class Snapshot(NamedTuple):
    """Quantities held constant over the horizon."""

    neighbors: Tensor
    thrusts: Tensor
    f_sigma: Tensor | None = None

    @classmethod
    def empty(cls, f_sigma: Tensor | None = None) -> "Snapshot":
        return cls(
            torch.zeros(0, STATE_DIM, dtype=DTYPE),
            torch.zeros(0, dtype=DTYPE),
            f_sigma,
        )

    @property
    def accel(self) -> Tensor | None:
        return None if self.f_sigma is None else self.f_sigma[VEL]


class Ltv(NamedTuple):
    A: Tensor  # (N, nx, nx)
    B: Tensor  # (N, nx, nu)
    c: Tensor  # (N, nx)

    @property
    def N(self) -> int:
        return self.A.shape[0]


def discretize_and_linearize(
    model: PredictionModel,
    x_bar: Tensor,
    u_bar: Tensor,
    snapshot: Snapshot,
    config: OcpConfig,
) -> Ltv:
    """
    Forward-difference Jacobians of the RK4-discretized model, evaluated
    for all stages in a single batched call.
    """
    N = u_bar.shape[0]
    if x_bar.shape != (N + 1, STATE_DIM) or u_bar.shape != (N, INPUT_DIM):
        raise ContractError(
            f"nominal trajectory has shapes {tuple(x_bar.shape)}, "
            f"{tuple(u_bar.shape)}"
        )
    nx, nu = STATE_DIM, INPUT_DIM
    h = config.fd_step

    base = torch.cat([x_bar[:-1], u_bar], dim=-1)
    perturbed = base.unsqueeze(1) + h * torch.eye(nx + nu, dtype=DTYPE)
    points = torch.cat([base.unsqueeze(1), perturbed], dim=1)

    try:
        out = model.step(
            points[..., :nx],
            points[..., nx:],
            snapshot.neighbors,
            snapshot.thrusts,
            config.T,
            accel=snapshot.accel,
        )
    except IntegrationDivergedError as e:
        raise LinearizationError(f"prediction model failed: {e}") from e

    J = ((out[:, 1:] - out[:, :1]) / h).transpose(-2, -1)
    c = out[:, 0] - x_bar[1:]

    if not all_finite(J, c):
        raise LinearizationError("non-finite Jacobian entries")

    return Ltv(A=J[..., :nx], B=J[..., nx:], c=c)


class CostWeights(NamedTuple):
    Q: Tensor
    R: Tensor
    P: Tensor


class CondensedQp(NamedTuple):
    problem: QpProblem
    Psi: Tensor  # (N * nx, N * nu), input deviations to successor states
    free: Tensor  # (N * nx), successor states at zero input deviation
    n_inputs: int
    state_dim: int

    def states(self, z: Tensor) -> Tensor:
        """Predicted successor states x_1..x_N, shape (N, nx)."""
        x = self.free + mv(self.Psi, z[: self.n_inputs])
        return x.view(-1, self.state_dim)

    def start(self, du: Tensor) -> Tensor:
        """Feasible starting point with the smallest slacks for ``du``."""
        G_u = self.problem.G[:, : self.n_inputs]
        s = torch.clamp(mv(G_u, du) - self.problem.b, min=0)
        return torch.cat([du, s])


def _propagation(ltv: Ltv, δx0: Tensor) -> tuple[Tensor, Tensor]:
    N = ltv.N
    nx, nu = ltv.B.shape[-2:]
    Psi = torch.zeros(N, nx, N * nu, dtype=DTYPE)
    offset = torch.zeros(N, nx, dtype=DTYPE)

    Psi_j = torch.zeros(nx, N * nu, dtype=DTYPE)
    off_j = δx0
    for j in range(N):
        Psi_j = ltv.A[j] @ Psi_j
        Psi_j[:, j * nu : (j + 1) * nu] += ltv.B[j]
        off_j = mv(ltv.A[j], off_j) + ltv.c[j]
        Psi[j], offset[j] = Psi_j, off_j

    return Psi, offset


def condense(
    ltv: Ltv,
    weights: CostWeights,
    x0: Tensor,
    x_bar: Tensor,
    u_bar: Tensor,
    x_ref: Tensor,
    u_ref: Tensor,
    input_lower: Tensor | None = None,
    input_upper: Tensor | None = None,
    state_lower: Tensor | None = None,
    state_upper: Tensor | None = None,
    slack_linear: float = 1e3,
    slack_quadratic: float = 1.0,
) -> CondensedQp:
    """
    Dense QP in z = (δu_0, ..., δu_{N-1}, s).

    The cost penalizes successor states x_1..x_N against ``x_ref[1:]`` with
    Q, the final state additionally with P, and the inputs against
    ``u_ref`` with R. Finite state bounds become soft rows with one slack
    each, priced at ``slack_linear * s + ½ slack_quadratic * s²``.
    """
    N = ltv.N
    nx, nu = ltv.B.shape[-2:]
    if (
        ltv.A.shape != (N, nx, nx)
        or ltv.c.shape != (N, nx)
        or x_bar.shape != (N + 1, nx)
        or u_bar.shape != (N, nu)
        or x_ref.shape != (N + 1, nx)
        or x0.shape != (nx,)
        or weights.Q.shape != (nx, nx)
        or weights.P.shape != (nx, nx)
        or weights.R.shape != (nu, nu)
    ):
        raise ContractError("inconsistent dimensions in condensing")

    Psi, offset = _propagation(ltv, x0 - x_bar[0])
    free = x_bar[1:] + offset

    Q_bar = block_diag_repeat(weights.Q, N)
    Q_bar[-nx:, -nx:] += weights.P
    R_bar = block_diag_repeat(weights.R, N)

    Psi_flat = Psi.view(N * nx, N * nu)
    error = (free - x_ref[1:]).flatten()
    u_offset = (u_bar - u_ref.expand(N, nu)).flatten()

    H = Psi_flat.T @ Q_bar @ Psi_flat + R_bar
    h = Psi_flat.T @ mv(Q_bar, error) + mv(R_bar, u_offset)

    # soft state rows
    G_rows, b_rows = [], []
    if state_lower is not None:
        k = torch.isfinite(state_lower).nonzero().flatten()
        G_rows.append(-Psi[:, k].reshape(-1, N * nu))
        b_rows.append((free[:, k] - state_lower[k]).flatten())
    if state_upper is not None:
        k = torch.isfinite(state_upper).nonzero().flatten()
        G_rows.append(Psi[:, k].reshape(-1, N * nu))
        b_rows.append((state_upper[k] - free[:, k]).flatten())
    G_u = torch.cat(G_rows) if G_rows else torch.zeros(0, N * nu, dtype=DTYPE)
    b = torch.cat(b_rows) if b_rows else torch.zeros(0, dtype=DTYPE)
    n_s = G_u.shape[0]

    inf = float("inf")
    lb_u = (
        (input_lower - u_bar).flatten()
        if input_lower is not None
        else torch.full((N * nu,), -inf, dtype=DTYPE)
    )
    ub_u = (
        (input_upper - u_bar).flatten()
        if input_upper is not None
        else torch.full((N * nu,), inf, dtype=DTYPE)
    )

    H_full = torch.block_diag(
        0.5 * (H + H.T), slack_quadratic * torch.eye(n_s, dtype=DTYPE)
    )
    problem = QpProblem(
        H=H_full,
        h=torch.cat([h, torch.full((n_s,), slack_linear, dtype=DTYPE)]),
        lb=torch.cat([lb_u, torch.zeros(n_s, dtype=DTYPE)]),
        ub=torch.cat([ub_u, torch.full((n_s,), inf, dtype=DTYPE)]),
        G=torch.cat([G_u, -torch.eye(n_s, dtype=DTYPE)], dim=1),
        b=b,
    )
    return CondensedQp(problem, Psi_flat, free.flatten(), N * nu, nx)
