from dataclasses import replace
import logging
from pathlib import Path
import sys

from jsonargparse import (
    ActionConfigFile,
    ActionYesNo,
    ArgumentParser,
    Namespace,
)
from jsonargparse.typing import NonNegativeInt

from torchformation.errors import ContractError, TrainingDivergedError
from torchformation.knode.data import (
    DataConfig,
    TrainingScenario,
    evaluate_prediction,
    generate_training_data,
)
from torchformation.knode.hybrid import HybridModel
from torchformation.knode.io import save_weights
from torchformation.knode.nn import DenseNet
from torchformation.knode.train import TrainingConfig, train_knode
from torchformation.sim.io import output_dir

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 3

parser = ArgumentParser(prog="train")

parser.add_argument(
    "--scenario", type=TrainingScenario, default=TrainingScenario.both
)
parser.add_argument("--seeds", type=list[int], default=[0, 1, 2])
parser.add_argument("--held_out_seeds", type=list[int], default=[100, 101])
parser.add_argument("--epochs", type=NonNegativeInt, default=2000)
parser.add_argument("--init_seed", type=int, default=0)
parser.add_argument("--data", type=DataConfig, default=DataConfig())
parser.add_argument("--train", type=TrainingConfig, default=TrainingConfig())
parser.add_argument("--net", type=DenseNet, default=DenseNet())
parser.add_argument(
    "-o", "--out", type=str | None, default=None, help="weights file"
)
parser.add_argument("--progress_bar", action=ActionYesNo, default=True)
parser.add_argument("-c", "--config", action=ActionConfigFile)


def loss_path(weights: Path) -> Path:
    return weights.with_name(weights.stem + ".loss.csv")


def main(config: Namespace) -> int:
    instantiated = parser.instantiate_classes(config)
    data_config = replace(instantiated.data, scenario=config.scenario)
    train_config = replace(
        instantiated.train,
        epochs=config.epochs,
        progress_bar=config.progress_bar,
    )
    out = Path(config.out or output_dir(".") / "knode_dw.txt")

    data = generate_training_data(
        data_config, config.seeds, progress_bar=config.progress_bar
    )
    mlp = instantiated.net.build(seed=config.init_seed)

    try:
        mlp, history = train_knode(data, mlp, train_config)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except TrainingDivergedError as e:
        mlp.load_state_dict(e.checkpoint)
        save_weights(mlp, out)
        print(
            f"error: training diverged at epoch {e.epoch}; last finite "
            f"weights saved to {out}",
            file=sys.stderr,
        )
        return EXIT_DIVERGED

    save_weights(mlp, out)
    history.to_csv(loss_path(out), index=False)
    logger.info(f"Saved weights to {out} and losses to {loss_path(out)}")

    print(f"final training loss: {history['loss'].iloc[-1]:.6g}")

    if config.held_out_seeds:
        held_out = generate_training_data(data_config, config.held_out_seeds)
        if len(held_out) == 0:
            logger.warning("No held-out segment survived; skipping")
            return EXIT_OK
        horizon = train_config.horizon
        params, dw = train_config.params, train_config.dw
        dw_only = evaluate_prediction(
            held_out, HybridModel("dw", params, dw), horizon
        )
        knode = evaluate_prediction(
            held_out, HybridModel("knode_dw", params, dw, mlp), horizon
        )
        print(
            f"held-out {horizon}-step velocity rmse: dw {dw_only:.6g}, "
            f"knode_dw {knode:.6g} "
            f"({100 * (1 - knode / dw_only):.1f}% lower)"
        )

    return EXIT_OK
