from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import logging
from typing import NamedTuple, TypeAlias

from jsonargparse.typing import NonNegativeFloat, NonNegativeInt, PositiveInt
import pandas as pd
import torch
from tqdm import trange

from torchformation.dynamics.downwash import DwParams
from torchformation.dynamics.rigid_body import POS, VEL, QuadParams
from torchformation.errors import (
    ContractError,
    IntegrationDivergedError,
    TrainingDivergedError,
)
from torchformation.knode.data import TrainingSet, Windows, unroll
from torchformation.knode.hybrid import HybridModel, ModelVariant
from torchformation.knode.nn import Mlp
from torchformation.sim.logging import Logger, RunLogger
from torchformation.utils.torch import as_tensor

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor


class TrainingResult(NamedTuple):
    mlp: Mlp
    history: pd.DataFrame


@dataclass(kw_only=True)
class TrainingConfig:
    epochs: NonNegativeInt = 2000
    lr: NonNegativeFloat = 1e-3
    momentum: NonNegativeFloat = 0.9
    horizon: PositiveInt = 5
    params: QuadParams = field(default_factory=QuadParams)
    dw: DwParams = field(default_factory=DwParams)
    progress_bar: bool = True
    progress_bar_interval: PositiveInt = 10


def prediction_loss(
    predicted: Tensor, windows: Windows, dt: float, g: float
) -> Tensor:
    """
    Mean squared multi-step prediction error of position and velocity,
    each converted to the constant acceleration that would explain it over
    the elapsed time and expressed in units of g.
    """
    H = windows.horizon
    elapsed = dt * torch.arange(1, H + 1, dtype=predicted.dtype)
    target = windows.states[:, 1:]

    e_p = 2 * (predicted[..., POS] - target[..., POS]) / elapsed[:, None] ** 2
    e_v = (predicted[..., VEL] - target[..., VEL]) / elapsed[:, None]

    return torch.cat([e_p, e_v], dim=-1).div(g).pow(2).mean()


class Trainer(ABC):
    @abstractmethod
    def train(self, data: TrainingSet, mlp: Mlp) -> TrainingResult: ...


class MultiStepTrainer(Trainer):
    """
    Full-batch momentum descent on the multi-step prediction loss of the
    hybrid model, with gradients by backpropagation through the unrolled
    RK4 integrator.
    """

    run_logger = None

    def __init__(self, config: TrainingConfig):
        self.config = config

    def model(self, mlp: Mlp) -> HybridModel:
        return HybridModel(
            ModelVariant.knode_dw, self.config.params, self.config.dw, mlp
        )

    def training_step(
        self, model: HybridModel, windows: Windows, dt: float
    ) -> Tensor:
        predicted = unroll(model, windows, dt)
        g = float(torch.linalg.vector_norm(self.config.params.gravity))
        return prediction_loss(predicted, windows, dt, g)

    def train(
        self, data: TrainingSet, mlp: Mlp, run_logger: Logger | None = None
    ) -> TrainingResult:
        if len(data) == 0:
            raise ContractError("cannot train on an empty training set")
        if run_logger is None:
            run_logger = RunLogger()
        self.run_logger = run_logger

        config = self.config
        windows = data.windows(config.horizon)
        model = self.model(mlp)

        optimizer = torch.optim.SGD(
            mlp.parameters(), lr=config.lr, momentum=config.momentum
        )
        logger.info(
            f"Training {mlp.parameter_count} parameters on "
            f"{windows.states.shape[0]} windows of {config.horizon} steps"
        )

        checkpoint = _snapshot(mlp)
        with trange(
            config.epochs + 1,
            desc="Training",
            disable=not config.progress_bar,
        ) as pbar:
            for epoch in pbar:
                try:
                    loss = self.training_step(model, windows, data.dt)
                except IntegrationDivergedError as e:
                    loss = as_tensor(float("nan"))
                    logger.warning(f"Prediction diverged: {e}")

                if not torch.isfinite(loss):
                    mlp.load_state_dict(checkpoint)
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}",
                        checkpoint=checkpoint,
                        epoch=epoch,
                    )
                checkpoint = _snapshot(mlp)
                run_logger.update({"loss": loss.detach()}, step=epoch)

                if epoch % config.progress_bar_interval == 0:
                    pbar.set_postfix({"loss": f"{float(loss):.6g}"})

                if epoch == config.epochs:
                    break

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

        history = run_logger.get_data()
        history = pd.DataFrame(
            {
                "epoch": history["steps"].numpy(),
                "loss": history["loss"].numpy(),
            }
        )
        logger.info(f"Final training loss: {history['loss'].iloc[-1]:.6g}")
        return TrainingResult(mlp, history)


def _snapshot(mlp: Mlp) -> dict[str, Tensor]:
    return {k: v.detach().clone() for k, v in mlp.state_dict().items()}


def train_knode(
    data: TrainingSet, mlp: Mlp, config: TrainingConfig | None = None
) -> TrainingResult:
    """Train ``mlp`` in place and return it with its loss history."""
    return MultiStepTrainer(config or TrainingConfig()).train(data, mlp)
