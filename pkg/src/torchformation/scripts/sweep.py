"""
The three formation experiments.

    center  the center vehicle runs each of the five variants other than
            nominal MPC, in a V-stack (r = 0.1 m) and an I-stack, with
            z1 = 0.2 m and z2 = 0.4 m. The top vehicle runs L1 MPC and the
            bottom vehicle KNODE-DW MPC.
    bottom  the bottom vehicle runs each of the six variants in V- and
            I-stacks with z2 of 0.3 m and 0.4 m. The others run
            L1 KNODE-DW MPC.
    tight   an I-stack with z1 = z2 = 0.2 m, flown once with every vehicle
            on L1 KNODE-DW MPC and once with every vehicle on nominal MPC.
"""

from concurrent.futures import ProcessPoolExecutor
from enum import auto

from torchformation._compat import StrEnum
import logging
from pathlib import Path
import sys

from jsonargparse import (
    ActionConfigFile,
    ActionYesNo,
    ArgumentParser,
    Namespace,
)
from jsonargparse.typing import PositiveInt
from tqdm import tqdm

from torchformation.control.ocp import OcpConfig
from torchformation.errors import ConfigError
from torchformation.sim.io import (
    create_output_directory,
    output_dir,
    write_run_log,
)
from torchformation.sim.runner import run_scenario
from torchformation.sim.scenario import (
    ControllerVariant,
    Formation,
    FormationKind,
    PlantConfig,
    Scenario,
    TrajectorySpec,
    VehicleConfig,
    resolve_weights,
)
import torchformation.scripts.report as report

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1

RATES = (200.0, 400.0, 400.0)


class Experiment(StrEnum):
    center = auto()
    bottom = auto()
    tight = auto()


def _formation(kind: FormationKind, z2: float, z1: float = 0.2) -> Formation:
    r = 0.1 if kind == FormationKind.v_stack else 0.0
    return Formation(kind, z1=z1, z2=z2, r=r)


def _vehicles(
    controllers: list[ControllerVariant], weights: str | None
) -> list[VehicleConfig]:
    return [
        VehicleConfig(
            controller=c,
            rate=rate,
            weights=weights if ControllerVariant(c).needs_weights else None,
        )
        for c, rate in zip(controllers, RATES)
    ]


def experiment_grid(
    experiment: Experiment,
    weights: str | None = None,
    seeds: list[int] | None = None,
    trajectory: TrajectorySpec | None = None,
    plant: PlantConfig | None = None,
    solver: OcpConfig | None = None,
) -> list[Scenario]:
    """One scenario per (formation, variant) cell of ``experiment``."""
    V = ControllerVariant
    cells = []
    if experiment == Experiment.center:
        for kind in FormationKind:
            for variant in V:
                if variant == V.mpc:
                    continue
                cells.append(
                    (
                        f"center_{kind}_{variant}",
                        _formation(kind, z2=0.4),
                        [V.knode_dw_mpc, variant, V.l1_mpc],
                    )
                )
    elif experiment == Experiment.bottom:
        for kind in FormationKind:
            for z2 in (0.3, 0.4):
                for variant in V:
                    cells.append(
                        (
                            f"bottom_{kind}_z2{z2:g}_{variant}",
                            _formation(kind, z2=z2),
                            [variant, V.l1_knode_dw_mpc, V.l1_knode_dw_mpc],
                        )
                    )
    elif experiment == Experiment.tight:
        for variant in (V.l1_knode_dw_mpc, V.mpc):
            cells.append(
                (
                    f"tight_{variant}",
                    _formation(FormationKind.i_stack, z2=0.2),
                    [variant] * 3,
                )
            )
    else:
        raise ValueError(f"unknown experiment '{experiment}'")

    return [
        Scenario(
            name=name,
            formation=formation,
            trajectory=trajectory or TrajectorySpec(),
            vehicles=_vehicles(controllers, weights),
            plant=plant or PlantConfig(),
            solver=solver or OcpConfig(),
            seeds=list(seeds if seeds is not None else range(5)),
        )
        for name, formation, controllers in cells
    ]


def _run(job: tuple[Scenario, int, Path]) -> tuple[Path, bool]:
    scenario, seed, directory = job
    record = run_scenario(scenario, seed)
    return write_run_log(record, directory), record.failed


def run_grid(
    scenarios: list[Scenario],
    directory: Path,
    workers: int = 1,
    progress_bar: bool = True,
) -> list[Path]:
    """
    Run every (scenario, seed) of the grid and write its log. Each run
    seeds its own generator, so results do not depend on ``workers``.
    """
    jobs = [(s, seed, directory) for s in scenarios for seed in s.seeds]
    logger.info(f"Running {len(jobs)} runs on {workers} worker(s)")

    if workers == 1:
        results = [
            _run(job)
            for job in tqdm(jobs, desc="Sweep", disable=not progress_bar)
        ]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                tqdm(
                    pool.map(_run, jobs),
                    total=len(jobs),
                    desc="Sweep",
                    disable=not progress_bar,
                )
            )

    n_failed = sum(failed for _, failed in results)
    logger.info(f"{n_failed} of {len(jobs)} runs failed")
    return [path for path, _ in results]


parser = ArgumentParser(prog="sweep")

parser.add_argument("--experiment", type=Experiment, required=True)
parser.add_argument(
    "--weights",
    type=str | None,
    default=None,
    help="trained residual network used by every KNODE-DW vehicle",
)
parser.add_argument("--seeds", type=list[int], default=[0, 1, 2, 3, 4])
parser.add_argument(
    "--trajectory", type=TrajectorySpec, default=TrajectorySpec()
)
parser.add_argument("--plant", type=PlantConfig, default=PlantConfig())
parser.add_argument("--solver", type=OcpConfig, default=OcpConfig())
parser.add_argument("--workers", type=PositiveInt, default=1)
parser.add_argument("-o", "--out", type=str | None, default=None)
parser.add_argument("--progress_bar", action=ActionYesNo, default=True)
parser.add_argument("-c", "--config", action=ActionConfigFile)


def main(config: Namespace) -> int:
    instantiated = parser.instantiate_classes(config)
    scenarios = experiment_grid(
        config.experiment,
        weights=config.weights,
        seeds=config.seeds,
        trajectory=instantiated.trajectory,
        plant=instantiated.plant,
        solver=instantiated.solver,
    )
    try:
        for scenario in scenarios:
            resolve_weights(scenario, root=Path.cwd())
    except ConfigError as e:
        print(f"error: {scenario.name}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    directory = create_output_directory(
        Path(config.out) if config.out else output_dir("runs"),
        config,
        parser,
        name=str(config.experiment),
    )
    run_grid(scenarios, directory, config.workers, config.progress_bar)

    bundle = report.build_report(report.load_runs(directory))
    report.write_report(bundle, directory / "report")
    print(bundle.summary.to_string(index=False))
    return EXIT_OK
