import sys

from jsonargparse import ArgumentParser, Namespace

import torchformation.scripts.report as report
import torchformation.scripts.simulate as simulate
import torchformation.scripts.sweep as sweep
import torchformation.scripts.train as train

parser = ArgumentParser(prog="formation")

subcommands = parser.add_subcommands()
subcommands.add_subcommand("simulate", simulate.parser)
subcommands.add_subcommand("train", train.parser)
subcommands.add_subcommand("sweep", sweep.parser)
subcommands.add_subcommand("report", report.parser)

COMMANDS = {
    "simulate": simulate.main,
    "train": train.main,
    "sweep": sweep.main,
    "report": report.main,
}


def main(config: Namespace) -> int:
    command = config.subcommand
    return COMMANDS[command](config[command])


def cli(args: list[str] | None = None) -> None:
    config = parser.parse_args(args)
    sys.exit(main(config))


if __name__ == "__main__":
    cli()
