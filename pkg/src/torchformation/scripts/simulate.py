import logging
from pathlib import Path
import sys

from jsonargparse import ActionYesNo, ArgumentParser, Namespace

from torchformation.errors import ConfigError
from torchformation.sim.io import output_dir, write_run_log
from torchformation.sim.runner import run_scenario
from torchformation.sim.scenario import load_scenario

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN_FAILED = 2

parser = ArgumentParser(prog="simulate")

parser.add_argument("scenario", type=str, help="path to a scenario file")
parser.add_argument(
    "--seed", type=int | None, default=None, help="overrides the seed list"
)
parser.add_argument("-o", "--out", type=str | None, default=None)
parser.add_argument("--progress_bar", action=ActionYesNo, default=True)


def main(config: Namespace) -> int:
    try:
        scenario = load_scenario(config.scenario)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    seeds = [config.seed] if config.seed is not None else scenario.seeds
    if not seeds:
        print(f"error: {config.scenario}: no seeds given", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(config.out) if config.out else output_dir("runs")

    n_failed = 0
    for seed in seeds:
        record = run_scenario(scenario, seed, config.progress_bar)
        write_run_log(record, out)
        if record.failed:
            n_failed += 1
            print(f"{scenario.name} seed {seed}: {record.failure}")
            continue
        for vehicle in record.vehicles:
            print(
                f"{scenario.name} seed {seed} {vehicle.role} "
                f"({vehicle.controller}): rmse {vehicle.metrics.rmse:.4f} m, "
                f"z_max {vehicle.metrics.z_max:.4f} m"
            )

    logger.info(f"{len(seeds) - n_failed} of {len(seeds)} runs succeeded")
    return EXIT_RUN_FAILED if n_failed else EXIT_OK
