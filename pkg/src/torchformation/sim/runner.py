"""
Closed-loop multi-vehicle simulation.

The plant advances at a fixed rate. Each vehicle's controller fires on
its own sub-multiple of that rate, using the latest plant state. Random
draws come from a single generator seeded per run, in this order on every
plant tick:

    1. position measurement noise, for each vehicle whose controller fires,
       in vehicle order (only if enabled);
    2. wake turbulence, three normals per vehicle, in vehicle order.
"""

import logging
from typing import TypeAlias

import torch
from tqdm import trange

from torchformation.control.l1 import L1AdaptiveModule
from torchformation.control.mpc import MpcController
from torchformation.control.ocp import Snapshot
from torchformation.dynamics.downwash import (
    NeighborSet,
    plant_interaction_force,
)
from torchformation.dynamics.rigid_body import (
    POS,
    QUAT,
    VEL,
    f_nom,
    rk4_step,
)
from torchformation.errors import IntegrationDivergedError
from torchformation.knode.hybrid import HybridModel
from torchformation.knode.io import load_weights
from torchformation.sim.logging import RunLogger
from torchformation.sim.metrics import compute_metrics, first_excursion
from torchformation.sim.record import Failure, RunRecord, VehicleRecord
from torchformation.sim.scenario import Scenario, config_hash, initial_states
from torchformation.utils.torch import DTYPE, as_tensor

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor


class Vehicle:
    """Controller stack of one vehicle together with its recorder."""

    def __init__(self, scenario: Scenario, index: int):
        config = scenario.vehicles[index]
        params = scenario.plant.quad

        self.scenario = scenario
        self.index = index
        self.config = config
        self.period = round(scenario.plant.rate / config.rate)

        mlp = (
            load_weights(config.weights)
            if config.controller.needs_weights
            else None
        )
        self.model = HybridModel(
            config.controller.model_variant, params, config.dw, mlp
        )
        self.solver = scenario.solver
        self.mpc = MpcController(
            self.model, self.solver, period=1 / config.rate
        )
        self.l1 = (
            L1AdaptiveModule(config.l1, params)
            if config.controller.adaptive
            else None
        )
        self.logger = RunLogger()

    @property
    def role(self) -> str:
        return self.scenario.role(self.index)

    def fires(self, tick: int) -> bool:
        return tick % self.period == 0

    def reference_window(self, t: float) -> Tensor:
        T = self.solver.T
        return torch.stack(
            [
                self.scenario.reference(self.index, t + j * T)
                for j in range(self.solver.N + 1)
            ]
        )

    def measure(self, x: Tensor, generator: torch.Generator) -> Tensor:
        plant = self.scenario.plant
        if not plant.position_noise:
            return x.clone()
        noise = torch.randn(3, generator=generator, dtype=DTYPE)
        x = x.clone()
        x[POS] += plant.noise_std * noise
        return x

    def control(
        self,
        tick: int,
        t: float,
        states: Tensor,
        thrusts: Tensor,
        force: Tensor,
        generator: torch.Generator,
    ) -> Tensor:
        """One control update. Returns the input to hold until the next."""
        x = self.measure(states[self.index], generator)

        nbrs = NeighborSet.from_team(
            self.index, states, thrusts, self.config.dw.alpha_nbr
        )
        neighbors, nbr_thrusts = nbrs.states(), nbrs.thrusts()

        window = self.reference_window(t)

        f_sigma = None
        if self.l1 is not None:
            f_sigma = self.l1.estimate(x[VEL])

        snapshot = Snapshot(neighbors, nbr_thrusts, f_sigma)
        solution = self.mpc(x, window, snapshot)
        u = solution.u0

        if self.l1 is not None:
            T_d = self.model.interaction_force(x, neighbors, nbr_thrusts)
            self.l1.propagate(x[VEL], x[QUAT], T_d, float(u[0]))
            sigma_hat = self.l1.state.sigma_hat
            U_sigma = self.l1.state.U_sigma
        else:
            sigma_hat = U_sigma = torch.zeros(3, dtype=DTYPE)

        truth = states[self.index]
        self.logger.update(
            {
                "t": as_tensor(t),
                "p": truth[POS],
                "v": truth[VEL],
                "q": truth[QUAT],
                "p_ref": window[0, POS],
                "v_ref": window[0, VEL],
                "u": u,
                "sigma_hat": sigma_hat.clone(),
                "U_sigma": U_sigma.clone(),
                "force": force.clone(),
                "kkt": as_tensor(solution.kkt),
                "iterations": as_tensor(solution.iterations),
                "active": as_tensor(solution.active.size),
            },
            step=tick,
            status=str(solution.status),
        )
        return u

    def to_record(self, failed: bool) -> VehicleRecord:
        series = self.logger.get_data()
        series.pop("steps", None)
        window = self.scenario.vehicle_trajectory(self.index).tracking_window
        metrics = None
        if not failed and series:
            metrics = compute_metrics(series, window)
        return VehicleRecord(
            role=self.role,
            controller=str(self.config.controller),
            rate=self.config.rate,
            tracking_window=window,
            compensation_sign=(
                str(self.config.l1.compensation_sign)
                if self.l1 is not None
                else ""
            ),
            series=series,
            status=self.logger.get_status(),
            metrics=metrics,
        )


def plant_step(
    scenario: Scenario,
    states: Tensor,
    inputs: Tensor,
    turbulence: Tensor,
    generator: torch.Generator,
) -> tuple[Tensor, Tensor, Tensor]:
    """
    Advance all vehicles by one plant period. Interaction forces are
    evaluated on the states at the start of the tick, so the update is
    simultaneous.
    """
    plant = scenario.plant
    dt = 1 / plant.rate
    thrusts = inputs[:, 0]

    next_states = torch.empty_like(states)
    forces = torch.empty(states.shape[0], 3, dtype=DTYPE)
    next_turbulence = torch.empty_like(turbulence)

    for i in range(states.shape[0]):
        others = torch.tensor(
            [m for m in range(states.shape[0]) if m != i], dtype=torch.long
        )
        force, next_turbulence[i] = plant_interaction_force(
            states[i],
            states[others],
            thrusts[others],
            turbulence[i],
            plant.interaction,
            dt,
            generator,
        )

        def f(x, u, force=force):
            xdot = f_nom(x, u, plant.quad)
            xdot[VEL] += force / plant.quad.eta
            return xdot

        next_states[i] = rk4_step(f, states[i], inputs[i], dt)
        forces[i] = force

    return next_states, forces, next_turbulence


def check_separation(states: Tensor, diameter: float) -> tuple[int, ...]:
    """First pair of vehicles closer than one body diameter, if any."""
    n = states.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            d = torch.linalg.vector_norm(states[i, POS] - states[j, POS])
            if float(d) < diameter:
                return (i, j)
    return ()


def check_excursions(vehicles: list[Vehicle], limit: float) -> Failure | None:
    """Earliest altitude error above ``limit`` inside a tracking window."""
    first = None
    for vehicle in vehicles:
        series = vehicle.logger.get_data()
        if not series:
            continue
        window = vehicle.scenario.vehicle_trajectory(
            vehicle.index
        ).tracking_window
        hit = first_excursion(series, window, limit)
        if hit is not None and (first is None or hit[0] < first.time):
            first = Failure(
                "excursion",
                hit[0],
                (vehicle.index,),
                f"altitude error {hit[1]:.3f} m",
            )
    return first


def run_scenario(
    scenario: Scenario, seed: int, progress_bar: bool = False
) -> RunRecord:
    """
    Simulate ``scenario`` with random generator seeded by ``seed``.

    A crash (altitude below zero or a diverged state) or a collision ends
    the run early and is reported in ``RunRecord.failure``; metrics are
    only computed for successful runs. With ``scenario.z_limit`` set, a
    completed run whose altitude error exceeds the limit inside a tracking
    window fails with an excursion.
    """
    generator = torch.Generator().manual_seed(seed)
    plant = scenario.plant
    dt = 1 / plant.rate
    n_ticks = round(scenario.run_duration * plant.rate)

    vehicles = [Vehicle(scenario, i) for i in scenario.ids]
    n = len(vehicles)

    states = initial_states(scenario)
    inputs = plant.quad.hover_input().expand(n, 4).clone()
    forces = torch.zeros(n, 3, dtype=DTYPE)
    turbulence = torch.zeros(n, 3, dtype=DTYPE)
    failure = None

    logger.info(
        f"Running '{scenario.name}' seed {seed}: "
        + ", ".join(f"{v.role}={v.config.controller}" for v in vehicles)
    )

    with torch.no_grad():
        for tick in trange(n_ticks, disable=not progress_bar, desc="sim"):
            t = tick * dt

            thrusts = plant.quad.clip_input(inputs)[:, 0]
            next_inputs = inputs.clone()
            for i, vehicle in enumerate(vehicles):
                if vehicle.fires(tick):
                    next_inputs[i] = vehicle.control(
                        tick, t, states, thrusts, forces[i], generator
                    )
            inputs = next_inputs

            try:
                states, forces, turbulence = plant_step(
                    scenario, states, inputs, turbulence, generator
                )
            except IntegrationDivergedError as e:
                failure = Failure("crash", t + dt, tuple(range(n)), str(e))
                break

            crashed = tuple(
                i for i in range(n) if float(states[i, 2]) < 0
            )
            if crashed:
                failure = Failure("crash", t + dt, crashed, "altitude < 0")
                break

            pair = check_separation(states, plant.quad.diameter)
            if pair:
                failure = Failure("collision", t + dt, pair)
                break

    if failure is None and scenario.z_limit is not None:
        failure = check_excursions(vehicles, scenario.z_limit)

    if failure is not None:
        logger.info(f"Run '{scenario.name}' seed {seed} failed: {failure}")

    record = RunRecord(
        name=scenario.name,
        seed=seed,
        config_hash=config_hash(scenario),
        vehicles=[v.to_record(failure is not None) for v in vehicles],
        failure=failure,
    )
    if failure is None:
        logger.info(
            f"Run '{scenario.name}' seed {seed} complete: "
            + ", ".join(
                f"{v.role} rmse={v.metrics.rmse:.4f}" for v in record.vehicles
            )
        )
    return record
