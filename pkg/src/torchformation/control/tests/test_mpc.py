import pytest
import torch

from torchformation.control import mpc as mpc_module
from torchformation.control.mpc import (
    MpcController,
    MpcSolution,
    equilibrium_input,
    mpc_step,
    nominal_trajectory,
)
from torchformation.control.ocp import OcpConfig, Snapshot
from torchformation.control.qp import SolveStatus
from torchformation.dynamics.rigid_body import (
    QuadParams,
    f_nom,
    hover_state,
    rk4_step,
)
from torchformation.errors import ContractError
from torchformation.knode.hybrid import HybridModel, ModelVariant
from torchformation.utils.torch import DTYPE, as_tensor

PARAMS = QuadParams()
CONFIG = OcpConfig()
PERIOD = 0.005


def window(position, N=CONFIG.N) -> torch.Tensor:
    return hover_state(position).expand(N + 1, 10).clone()


def plant_step(x, u, dt=PERIOD):
    return rk4_step(lambda x, u: f_nom(x, u, PARAMS), x, u, dt)


def test_equilibrium_input_is_hover():
    model = HybridModel(ModelVariant.nominal, PARAMS)
    x = hover_state([0.0, 0.0, 1.0])
    sol = mpc_step(x, window([0.0, 0.0, 1.0]), model, Snapshot.empty(), CONFIG)

    assert sol.status == SolveStatus.solved
    assert float(sol.u0[0]) == pytest.approx(PARAMS.hover_thrust, abs=1e-6)
    assert sol.u0[1:].abs().max() < 1e-6
    assert sol.kkt < 1e-8


def test_warm_start_idempotent_at_equilibrium():
    controller = MpcController(
        HybridModel(ModelVariant.nominal, PARAMS), CONFIG
    )
    x = hover_state([0.5, -0.5, 1.0])
    ref = window([0.5, -0.5, 1.0])

    first = controller(x, ref, Snapshot.empty())
    for _ in range(3):
        again = controller(x, ref, Snapshot.empty())
        assert torch.allclose(again.inputs, first.inputs, atol=1e-10)


def test_nominal_and_dw_identical_without_neighbors():
    x = hover_state([0.0, 0.0, 1.0])
    x[3:6] = as_tensor([0.1, -0.2, 0.05])
    ref = window([0.2, 0.0, 1.1])

    nominal = mpc_step(
        x,
        ref,
        HybridModel(ModelVariant.nominal, PARAMS),
        Snapshot.empty(),
        CONFIG,
    )
    dw = mpc_step(
        x, ref, HybridModel(ModelVariant.dw, PARAMS), Snapshot.empty(), CONFIG
    )
    assert torch.equal(nominal.inputs, dw.inputs)
    assert torch.equal(nominal.states, dw.states)


def test_inputs_respect_bounds_on_large_step():
    stiff = OcpConfig(N=10, r_thrust=0.6)
    controller = MpcController(
        HybridModel(ModelVariant.nominal, PARAMS), stiff, PERIOD
    )
    x = hover_state([0.0, 0.0, 1.0])
    ref = window([0.0, 0.0, 2.0], N=stiff.N)
    lower, upper = PARAMS.input_lower(), PARAMS.input_upper()

    saturated = False
    for _ in range(40):
        sol = controller(x, ref, Snapshot.empty())
        assert bool((sol.inputs >= lower).all())
        assert bool((sol.inputs <= upper).all())
        saturated = saturated or float(sol.u0[0]) > PARAMS.u_max - 1e-9
        x = plant_step(x, sol.u0)

    assert saturated
    assert float(x[2]) > 1.0


def test_tracks_lateral_reference():
    controller = MpcController(
        HybridModel(ModelVariant.nominal, PARAMS), CONFIG, PERIOD
    )
    x = hover_state([0.0, 0.0, 1.0])
    ref = window([0.1, 0.0, 1.0])

    for _ in range(600):
        sol = controller(x, ref, Snapshot.empty())
        x = plant_step(x, sol.u0)

    assert abs(float(x[0]) - 0.1) < 5e-3
    assert abs(float(x[2]) - 1.0) < 5e-3


def test_failure_holds_previous_input():
    model = HybridModel(ModelVariant.dw, PARAMS)
    x = hover_state([0.0, 0.0, 1.0])
    broken = Snapshot(
        hover_state([0.0, 0.0, 1.2]).unsqueeze(0),
        as_tensor([float("nan")]),
    )
    sol = mpc_step(x, window([0.0, 0.0, 1.0]), model, broken, CONFIG)

    assert sol.status == SolveStatus.degraded
    assert torch.equal(sol.u0, PARAMS.hover_input())


def test_reference_window_shape():
    model = HybridModel(ModelVariant.nominal, PARAMS)
    x = hover_state([0.0, 0.0, 1.0])
    with pytest.raises(ContractError):
        mpc_step(
            x,
            window([0, 0, 1.0], N=CONFIG.N - 1),
            model,
            Snapshot.empty(),
            CONFIG,
        )


def test_downwash_model_anticipates_push():
    x = hover_state([0.0, 0.0, 1.0])
    ref = window([0.0, 0.0, 1.0])
    above = Snapshot(
        hover_state([0.0, 0.0, 1.15]).unsqueeze(0),
        as_tensor([PARAMS.hover_thrust]),
    )
    nominal = mpc_step(
        x, ref, HybridModel(ModelVariant.nominal, PARAMS), above, CONFIG
    )
    dw = mpc_step(x, ref, HybridModel(ModelVariant.dw, PARAMS), above, CONFIG)

    assert float(dw.u0[0]) > float(nominal.u0[0])
    assert torch.allclose(
        nominal.u0, PARAMS.hover_input(), atol=1e-6
    ), "nominal model ignores neighbors"
    assert dw.states.dtype == DTYPE


def test_equilibrium_input_cancels_modelled_push():
    model = HybridModel(ModelVariant.dw, PARAMS)
    ref = window([0.0, 0.0, 1.0])
    above = Snapshot(
        hover_state([0.0, 0.0, 1.2]).unsqueeze(0),
        as_tensor([PARAMS.hover_thrust]),
    )
    u_ref = equilibrium_input(model, ref[:-1], above)
    push = model.interaction_force(ref[0], above.neighbors, above.thrusts)

    assert u_ref.shape == (CONFIG.N, 4)
    assert float(u_ref[0, 0]) == pytest.approx(
        PARAMS.hover_thrust - float(push[2]), abs=1e-12
    )
    assert u_ref[:, 1:].abs().max() == 0

    nominal = HybridModel(ModelVariant.nominal, PARAMS)
    lifted = Snapshot.empty(as_tensor([0.0] * 5 + [0.5] + [0.0] * 4))
    u_ref = equilibrium_input(nominal, ref[:-1], lifted)
    assert float(u_ref[0, 0]) == pytest.approx(
        PARAMS.hover_thrust - 0.5 * PARAMS.eta, abs=1e-12
    )


def staged_solution(N: int = 4) -> MpcSolution:
    states = hover_state([0.0, 0.0, 1.0]).expand(N + 1, 10).clone()
    states[:, 0] = torch.arange(N + 1, dtype=DTYPE)
    inputs = PARAMS.hover_input().expand(N, 4).clone()
    inputs[:, 1] = 0.1 * torch.arange(N, dtype=DTYPE)
    return MpcSolution(
        inputs, states, SolveStatus.solved, mpc_module.NAN_RESIDUALS
    )


def test_warm_start_shift_by_whole_stages():
    previous = staged_solution()
    ref = window([0.0, 0.0, 1.0], N=4)

    x_bar, u_bar = nominal_trajectory(ref, PARAMS, previous, shift=0)
    assert x_bar[:, 0].tolist() == [0, 1, 2, 3, 4]
    assert torch.equal(u_bar, previous.inputs)

    x_bar, u_bar = nominal_trajectory(ref, PARAMS, previous, shift=2)
    assert x_bar[:, 0].tolist() == [2, 3, 4, 4, 4]
    assert u_bar[:, 1].tolist() == pytest.approx([0.2, 0.3, 0.3, 0.3])

    with pytest.raises(ContractError):
        nominal_trajectory(ref, PARAMS, previous, shift=-1)


def test_controller_faster_than_prediction_grid(monkeypatch):
    shifts = []

    def record(*args):
        shifts.append(args[-1])
        return staged_solution()

    monkeypatch.setattr(mpc_module, "mpc_step", record)
    controller = MpcController(
        HybridModel(ModelVariant.nominal, PARAMS), CONFIG, PERIOD
    )
    x = hover_state([0.0, 0.0, 1.0])
    for _ in range(9):
        controller(x, window([0.0, 0.0, 1.0]), Snapshot.empty())

    # 0.005 s updates on a 0.02 s grid shift once every fourth call
    assert shifts == [0, 0, 0, 0, 1, 0, 0, 0, 1]

    controller.reset()
    controller(x, window([0.0, 0.0, 1.0]), Snapshot.empty())
    assert shifts[-1] == 0
