"""
Receding-horizon controller built on one real-time iteration per step:
shift the previous solution, linearize about it, condense, solve the QP,
and apply the first input.
"""

import logging
from math import floor
from time import perf_counter
from typing import NamedTuple, TypeAlias

import torch

from torchformation.control.ocp import (
    CostWeights,
    OcpConfig,
    PredictionModel,
    Snapshot,
    condense,
    discretize_and_linearize,
)
from torchformation.control.qp import (
    ActiveSet,
    KktResiduals,
    SolveStatus,
    solve_qp,
)
from torchformation.dynamics.rigid_body import (
    INPUT_DIM,
    QUAT,
    STATE_DIM,
    QuadParams,
    check_state,
    normalize_quaternion,
)
from torchformation.errors import (
    ContractError,
    InvalidStateError,
    LinearizationError,
    QpInfeasibleError,
)
from torchformation.utils.linalg import dot
from torchformation.utils.torch import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor

NAN_RESIDUALS = KktResiduals(*[float("nan")] * 4)


class MpcSolution(NamedTuple):
    inputs: Tensor  # (N, 4)
    states: Tensor  # (N + 1, 10)
    status: SolveStatus
    residuals: KktResiduals
    iterations: int = 0
    active: ActiveSet = ActiveSet()

    @property
    def u0(self) -> Tensor:
        return self.inputs[0]

    @property
    def kkt(self) -> float:
        return self.residuals.max()


def align_quaternions(x_ref: Tensor, x_bar: Tensor) -> Tensor:
    """Flip reference quaternions into the hemisphere of the nominal ones."""
    q_ref = x_ref[..., QUAT]
    flip = dot(q_ref, x_bar[..., QUAT]) < 0
    q_ref = torch.where(flip.unsqueeze(-1), -q_ref, q_ref)
    return torch.cat([x_ref[..., :6], q_ref], dim=-1)


def nominal_trajectory(
    x_ref: Tensor,
    params: QuadParams,
    previous: MpcSolution | None,
    shift: int = 1,
) -> tuple[Tensor, Tensor]:
    """
    Shift the previous solution by ``shift`` stages, repeating the last
    entry. Without a previous solution, the reference and hover input are
    used.
    """
    N = x_ref.shape[0] - 1
    if previous is None:
        return x_ref.clone(), params.hover_input().expand(N, INPUT_DIM)
    if shift < 0:
        raise ContractError(f"cannot shift by {shift} stages")

    x_idx = torch.clamp(torch.arange(N + 1) + shift, max=N)
    u_idx = torch.clamp(torch.arange(N) + shift, max=N - 1)
    x_bar = previous.states[x_idx]
    u_bar = previous.inputs[u_idx]
    return normalize_quaternion(x_bar), params.clip_input(u_bar)


def equilibrium_input(
    model: PredictionModel, x_ref: Tensor, snapshot: Snapshot
) -> Tensor:
    """
    Input reference per stage: zero rates and the thrust that cancels the
    vertical acceleration the model predicts at the reference states, so
    that forces known to the model cost nothing to reject.
    """
    params = model.params
    a = model.interaction_force(
        x_ref, snapshot.neighbors, snapshot.thrusts
    ) / params.eta
    if snapshot.accel is not None:
        a = a + snapshot.accel
    thrust = params.eta * (params.gravity[2] - a[..., 2])
    u_ref = params.hover_input().expand(*x_ref.shape[:-1], INPUT_DIM)
    u_ref = torch.cat([thrust.unsqueeze(-1), u_ref[..., 1:]], dim=-1)
    return params.clip_input(u_ref)


def fallback(
    x: Tensor,
    x_ref: Tensor,
    params: QuadParams,
    previous: MpcSolution | None,
    residuals: KktResiduals = NAN_RESIDUALS,
) -> MpcSolution:
    N = x_ref.shape[0] - 1
    if previous is None:
        inputs = params.hover_input().expand(N, INPUT_DIM).clone()
    else:
        inputs = previous.inputs.clone()
    states = torch.cat([x.unsqueeze(0), x_ref[1:]])
    return MpcSolution(inputs, states, SolveStatus.degraded, residuals)


def mpc_step(
    x: Tensor,
    x_ref: Tensor,
    model: PredictionModel,
    snapshot: Snapshot,
    config: OcpConfig,
    previous: MpcSolution | None = None,
    shift: int = 1,
) -> MpcSolution:
    """
    One real-time iteration from the measured state ``x`` against the
    reference window ``x_ref`` of length N + 1. ``shift`` is the number
    of whole stages elapsed since ``previous`` was computed.

    Solver failures never propagate: the previous input sequence is
    returned with status ``degraded``.
    """
    N = config.N
    if x_ref.shape != (N + 1, STATE_DIM):
        raise ContractError(
            f"reference window must have shape {(N + 1, STATE_DIM)}, "
            f"got {tuple(x_ref.shape)}"
        )
    check_state(x, tol=1e-6)
    params = model.params

    x_bar, u_bar = nominal_trajectory(x_ref, params, previous, shift)
    x_ref = align_quaternions(x_ref, x_bar)
    state_lower, state_upper = config.state_box()

    try:
        ltv = discretize_and_linearize(model, x_bar, u_bar, snapshot, config)
        qp = condense(
            ltv,
            CostWeights(config.Q, config.R, config.P),
            x0=x,
            x_bar=x_bar,
            u_bar=u_bar,
            x_ref=x_ref,
            u_ref=equilibrium_input(model, x_ref[:-1], snapshot),
            input_lower=params.input_lower(),
            input_upper=params.input_upper(),
            state_lower=state_lower,
            state_upper=state_upper,
            slack_linear=config.slack_linear,
            slack_quadratic=config.slack_quadratic,
        )
        t0 = perf_counter()
        z0 = qp.start(torch.zeros(qp.n_inputs, dtype=DTYPE))
        sol = solve_qp(qp.problem, z0)
        logger.debug(
            f"QP {sol.status} in {sol.iterations} iterations, "
            f"{1e3 * (perf_counter() - t0):.2f} ms"
        )
    except (LinearizationError, QpInfeasibleError, InvalidStateError) as e:
        logger.warning(f"MPC step failed, holding previous input: {e}")
        return fallback(x, x_ref, params, previous)

    if not sol.ok:
        logger.warning(
            f"QP returned {sol.status}, holding previous input "
            f"(KKT residual {sol.residuals.max():.2e})"
        )
        return fallback(x, x_ref, params, previous, sol.residuals)

    du = sol.z[: qp.n_inputs].view(N, INPUT_DIM)
    inputs = params.clip_input(u_bar + du)
    states = torch.cat([x.unsqueeze(0), qp.states(sol.z)])

    return MpcSolution(
        inputs=inputs,
        states=states,
        status=sol.status,
        residuals=sol.residuals,
        iterations=sol.iterations,
        active=sol.active,
    )


class MpcController:
    """
    Per-vehicle controller holding the warm start between calls. Each
    vehicle owns its own instance.

    The controller fires every ``period`` seconds, which may be shorter
    than the prediction step. The warm start is then shifted by the whole
    number of stages elapsed since the last shift, possibly zero.
    """

    def __init__(
        self,
        model: PredictionModel,
        config: OcpConfig,
        period: float | None = None,
    ):
        self.model = model
        self.config = config
        self.period = config.T if period is None else period
        if not self.period > 0:
            raise ContractError("controller period must be positive")
        self._previous = None
        self._elapsed = 0.0

    @property
    def previous(self) -> MpcSolution | None:
        return self._previous

    def reset(self) -> None:
        self._previous = None
        self._elapsed = 0.0

    def _stages_elapsed(self) -> int:
        if self._previous is None:
            return 0
        self._elapsed += self.period
        shift = floor(self._elapsed / self.config.T + 1e-9)
        self._elapsed -= shift * self.config.T
        return shift

    def __call__(self, x: Tensor, x_ref: Tensor, snapshot: Snapshot):
        shift = self._stages_elapsed()
        solution = mpc_step(
            x,
            x_ref,
            self.model,
            snapshot,
            self.config,
            self._previous,
            shift,
        )
        self._previous = solution
        return solution
