from math import cos, sin

import pytest
import torch

from torchformation.dynamics.downwash import (
    DwParams,
    NeighborSet,
    PlantInteractionParams,
    aggregate_downwash,
    downwash_force,
    ou_step,
    pairwise_dw_force,
    plant_interaction_force,
)
from torchformation.dynamics.rigid_body import hover_state
from torchformation.errors import OrderingError
from torchformation.utils.torch import DTYPE, as_tensor

DW = DwParams()
THRUST = 0.33354


def team(*positions) -> torch.Tensor:
    return torch.stack([hover_state(p) for p in positions])


def test_overhead_at_clamp_distance():
    ego, above = team([0, 0, 1.0], [0, 0, 1.0 + DW.z_min])
    F = pairwise_dw_force(ego, above, THRUST, DW)
    assert torch.allclose(F, as_tensor([0.0, 0.0, -DW.c0 * THRUST]))


def test_quadratic_axial_decay():
    ego, above = team([0, 0, 1.0], [0, 0, 1.0 + 2 * DW.z_min])
    F = pairwise_dw_force(ego, above, THRUST, DW)
    assert torch.allclose(F[2], as_tensor(-DW.c0 * THRUST / 4))


def test_radial_tail_vanishes():
    Δz = 0.3
    width = DW.sigma_r + DW.kappa * Δz
    ego, above = team([0, 0, 0.0], [10.5 * width, 0, Δz])
    assert pairwise_dw_force(ego, above, THRUST, DW).abs().max() < 1e-12


def test_monotone_in_gap_and_radius():
    ego = hover_state([0, 0, 0.0])
    gaps = torch.linspace(0.01, 1.0, 50, dtype=DTYPE)
    radii = torch.linspace(0.0, 0.5, 50, dtype=DTYPE)
    by_gap = [
        float(pairwise_dw_force(ego, hover_state([0, 0, z]), THRUST, DW)[2])
        for z in gaps
    ]
    by_radius = [
        float(pairwise_dw_force(ego, hover_state([r, 0, 0.2]), THRUST, DW)[2])
        for r in radii
    ]
    assert all(b >= a for a, b in zip(by_gap, by_gap[1:]))
    assert all(b >= a for a, b in zip(by_radius, by_radius[1:]))


def test_ordering_enforced():
    ego, level = team([0, 0, 1.0], [0.1, 0, 1.0])
    with pytest.raises(OrderingError):
        pairwise_dw_force(ego, level, THRUST, DW)


def test_empty_neighbor_set():
    F = aggregate_downwash(hover_state([0, 0, 1.0]), NeighborSet(0), DW)
    assert torch.equal(F, torch.zeros(3, dtype=DTYPE))


def test_strictly_above_filter():
    states = team([0, 0, 1.0], [0.05, 0, 0.7], [0, 0.02, 1.0])
    thrusts = torch.full((3,), THRUST, dtype=DTYPE)
    nbrs = NeighborSet.from_team(0, states, thrusts, DW.alpha_nbr)
    assert nbrs.ids == [1, 2]
    F = aggregate_downwash(states[0], nbrs, DW)
    assert torch.equal(F, torch.zeros(3, dtype=DTYPE))


def test_neighborhood_excludes_ego_and_far_vehicles():
    states = team([0, 0, 1.0], [0, 0, 1.5], [0, 0, 2.5])
    thrusts = torch.full((3,), THRUST, dtype=DTYPE)
    nbrs = NeighborSet.from_team(0, states, thrusts, DW.alpha_nbr)
    assert nbrs.ids == [1]


def test_additive_over_neighbors():
    ego = hover_state([0, 0, 0.0])
    a, b = team([0.03, 0, 0.2], [-0.02, 0.04, 0.5])
    thrusts = as_tensor([THRUST, 0.9 * THRUST])
    both = downwash_force(ego, torch.stack([a, b]), thrusts, DW)
    brute = pairwise_dw_force(ego, a, thrusts[0], DW) + pairwise_dw_force(
        ego, b, thrusts[1], DW
    )
    assert torch.allclose(both, brute, atol=1e-15)

    twice = downwash_force(ego, torch.stack([a, a]), thrusts[[0, 0]], DW)
    once = downwash_force(ego, a.unsqueeze(0), thrusts[:1], DW)
    assert torch.equal(twice, 2 * once)


def test_thrust_override():
    states = team([0, 0, 0.0], [0, 0, 0.2])
    thrusts = as_tensor([THRUST, THRUST])
    nbrs = NeighborSet.from_team(0, states, thrusts, DW.alpha_nbr)
    F1 = aggregate_downwash(states[0], nbrs, DW)
    F2 = aggregate_downwash(states[0], nbrs, DW, {1: 2 * THRUST})
    assert torch.allclose(F2, 2 * F1)


def test_translation_invariance():
    states = team([0, 0, 0.0], [0.03, 0.01, 0.25], [-0.02, 0, 0.6])
    shift = as_tensor([1.0, -2.0, 3.0, 0, 0, 0, 0, 0, 0, 0])
    thrusts = as_tensor([THRUST, THRUST])
    F1 = downwash_force(states[0], states[1:], thrusts, DW)
    F2 = downwash_force(states[0] + shift, states[1:] + shift, thrusts, DW)
    assert torch.allclose(F1, F2, atol=1e-15)


def test_rotation_about_vertical_axis():
    params = PlantInteractionParams(ou_sigma=0.0)
    states = team([0, 0, 0.0], [0.03, 0.01, 0.25], [-0.02, 0, -0.3])
    states[1, 3:6] = as_tensor([0.2, -0.1, 0.0])
    θ = 0.7
    Rz = as_tensor([[cos(θ), -sin(θ), 0], [sin(θ), cos(θ), 0], [0, 0, 1]])
    rotated = states.clone()
    rotated[:, 0:3] = states[:, 0:3] @ Rz.T
    rotated[:, 3:6] = states[:, 3:6] @ Rz.T
    thrusts = as_tensor([THRUST, THRUST])
    noise = torch.zeros(3, dtype=DTYPE)
    F1, _ = plant_interaction_force(
        states[0], states[1:], thrusts, noise, params, 1e-3
    )
    F2, _ = plant_interaction_force(
        rotated[0], rotated[1:], thrusts, noise, params, 1e-3
    )
    assert torch.allclose(F2, Rz @ F1, atol=1e-15)


def test_plant_without_others_is_zero():
    params = PlantInteractionParams(ou_sigma=0.0)
    F, _ = plant_interaction_force(
        hover_state([0, 0, 1.0]),
        torch.zeros(0, 10, dtype=DTYPE),
        torch.zeros(0, dtype=DTYPE),
        torch.zeros(3, dtype=DTYPE),
        params,
        1e-3,
    )
    assert torch.equal(F, torch.zeros(3, dtype=DTYPE))


def test_plant_reduces_to_controller_model():
    params = PlantInteractionParams.matching(
        DW, ou_sigma=0.0, below_gain=0.0, vel_skew=0.0
    )
    states = team([0, 0, 0.5], [0.03, 0.01, 0.75], [0, 0, 0.3])
    states[1, 3:6] = as_tensor([0.4, 0.0, 0.0])
    thrusts = as_tensor([THRUST, 1.1 * THRUST, THRUST])
    nbrs = NeighborSet.from_team(0, states, thrusts, DW.alpha_nbr)
    F_model = aggregate_downwash(states[0], nbrs, DW)
    F_plant, _ = plant_interaction_force(
        states[0],
        states[1:],
        thrusts[1:],
        torch.zeros(3, dtype=DTYPE),
        params,
        1e-3,
    )
    assert torch.allclose(F_plant, F_model, atol=1e-15, rtol=0)


def test_vehicle_below_pushes_up():
    params = PlantInteractionParams(ou_sigma=0.0)
    states = team([0, 0, 0.5], [0, 0, 0.3])
    F, _ = plant_interaction_force(
        states[0],
        states[1:],
        as_tensor([THRUST]),
        torch.zeros(3, dtype=DTYPE),
        params,
        1e-3,
    )
    assert float(F[2]) > 0


def test_plant_is_seeded():
    params = PlantInteractionParams()
    states = team([0, 0, 0.5], [0, 0, 0.8])
    args = (states[0], states[1:], as_tensor([THRUST]))

    def run(seed):
        gen = torch.Generator().manual_seed(seed)
        n = torch.zeros(3, dtype=DTYPE)
        out = []
        for _ in range(10):
            F, n = plant_interaction_force(*args, n, params, 1e-3, gen)
            out.append(F)
        return torch.stack(out)

    assert torch.equal(run(1), run(1))
    assert not torch.equal(run(1), run(2))


def test_ou_stationary_variance():
    sigma, tau, dt = 0.02, 0.2, 1e-3
    gen = torch.Generator().manual_seed(0)
    n = sigma * torch.randn(10_000, generator=gen, dtype=DTYPE)
    samples = []
    for _ in range(100):
        n = ou_step(n, sigma, tau, dt, gen)
        samples.append(n)
    var = torch.stack(samples).var()
    assert abs(float(var) / sigma**2 - 1) < 0.05
