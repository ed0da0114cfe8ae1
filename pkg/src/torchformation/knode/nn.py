from dataclasses import dataclass, field
from torchformation._compat import StrEnum
from math import sqrt
from typing import TypeAlias

import torch
import torch.nn as nn

from torchformation.utils.torch import DTYPE

Tensor: TypeAlias = torch.Tensor


class Activation(StrEnum):
    identity = "Identity"
    tanh = "Tanh"
    leaky_relu = "LeakyReLU"

    def __call__(self):
        activation_cls = getattr(nn, str(self))
        return activation_cls()


class Mlp(nn.Module):
    """
    Dense network with ``activation`` on hidden layers and an identity
    output. ``sizes`` lists the widths from input to output.
    """

    def __init__(
        self,
        sizes: list[int],
        activation: Activation = Activation.tanh,
    ):
        super().__init__()
        assert len(sizes) >= 2
        self.sizes = list(sizes)
        self.activation = Activation(activation)

        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(nn.Linear(n_in, n_out, dtype=DTYPE))
            if i < len(sizes) - 2:
                layers.append(self.activation())
        self.register_module("net", nn.Sequential(*layers))

    @property
    def parameter_count(self) -> int:
        return sum(tensor.numel() for tensor in self.parameters())

    def linear_layers(self) -> list[nn.Linear]:
        return [m for m in self.net if isinstance(m, nn.Linear)]

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None):
        """
        Uniform fan-in initialisation from ``generator``, with the output
        layer zeroed so that an untrained residual is exactly zero.
        """
        layers = self.linear_layers()
        for layer in layers[:-1]:
            bound = 1 / sqrt(layer.in_features)
            for p in (layer.weight, layer.bias):
                p.copy_(
                    torch.rand(p.shape, generator=generator, dtype=p.dtype)
                    .mul(2 * bound)
                    .sub(bound)
                )
        layers[-1].weight.zero_()
        layers[-1].bias.zero_()
        return self

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


@dataclass(kw_only=True)
class DenseNet:
    sizes: list[int] = field(default_factory=lambda: [8, 32, 32, 3])
    activation: Activation = Activation.tanh

    def build(self, seed: int = 0) -> Mlp:
        generator = torch.Generator().manual_seed(seed)
        return Mlp(self.sizes, self.activation).reset_parameters(generator)
