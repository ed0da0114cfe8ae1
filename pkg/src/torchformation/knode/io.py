"""
Plain-text storage of trained residual networks.

Layout::

    torchformation-mlp
    version 1
    sizes 8 32 32 3
    activation tanh
    <weight rows of layer 0, one line per output unit>
    <bias of layer 0, one line>
    ...
    end

Numbers are written with 17 significant digits so that a save followed by
a load reproduces every parameter bit for bit.
"""

from os import PathLike
from pathlib import Path
import logging

import torch

from torchformation.errors import WeightsFormatError
from torchformation.knode.nn import Activation, Mlp
from torchformation.utils.torch import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MAGIC = "torchformation-mlp"
FORMAT_VERSION = 1


def _row(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def save_weights(mlp: Mlp, path: str | PathLike) -> Path:
    path = Path(path)
    lines = [
        MAGIC,
        f"version {FORMAT_VERSION}",
        "sizes " + " ".join(str(n) for n in mlp.sizes),
        f"activation {mlp.activation.name}",
    ]
    for layer in mlp.linear_layers():
        lines.extend(_row(w) for w in layer.weight.detach())
        lines.append(_row(layer.bias.detach()))
    lines.append("end")

    logger.info(f"Saving network weights to {path}")
    path.write_text("\n".join(lines) + "\n")
    return path


class _Lines:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        self._pos = 0

    @property
    def lineno(self) -> int:
        return self._pos

    def next(self, field: str) -> str:
        if self._pos >= len(self._lines):
            raise WeightsFormatError(
                "unexpected end of file", field, self._pos + 1
            )
        line = self._lines[self._pos].strip()
        self._pos += 1
        return line

    def keyed(self, key: str) -> list[str]:
        tokens = self.next(key).split()
        if not tokens or tokens[0] != key:
            raise WeightsFormatError(f"expected '{key}'", key, self.lineno)
        return tokens[1:]


def _parse_ints(tokens: list[str], field: str, line: int) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError as e:
        raise WeightsFormatError(str(e), field, line) from e


def _parse_row(lines: _Lines, n: int, field: str) -> list[float]:
    line = lines.next(field)
    if line == "end":
        raise WeightsFormatError(
            "fewer rows than the declared sizes imply",
            "dimension",
            lines.lineno,
        )
    tokens = line.split()
    if len(tokens) != n:
        raise WeightsFormatError(
            f"expected {n} values, found {len(tokens)}",
            "dimension",
            lines.lineno,
        )
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise WeightsFormatError(str(e), field, lines.lineno) from e


def load_weights(path: str | PathLike) -> Mlp:
    path = Path(path)
    logger.info(f"Loading network weights from {path}")
    lines = _Lines(path.read_text())

    if lines.next("magic") != MAGIC:
        raise WeightsFormatError("not a weights file", "magic", 1)

    version = _parse_ints(lines.keyed("version"), "version", lines.lineno)
    if version != [FORMAT_VERSION]:
        raise WeightsFormatError(
            f"unsupported version {version}", "version", lines.lineno
        )

    sizes = _parse_ints(lines.keyed("sizes"), "sizes", lines.lineno)
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise WeightsFormatError(f"invalid sizes {sizes}", "sizes", 3)

    tokens = lines.keyed("activation")
    activation = tokens[0] if len(tokens) == 1 else " ".join(tokens)
    if activation not in Activation.__members__:
        raise WeightsFormatError(
            f"unknown activation '{activation}'", "activation", lines.lineno
        )

    mlp = Mlp(sizes, Activation[activation])

    with torch.no_grad():
        for i, layer in enumerate(mlp.linear_layers()):
            n_out, n_in = layer.weight.shape
            weight = [
                _parse_row(lines, n_in, f"layer {i} weight")
                for _ in range(n_out)
            ]
            bias = _parse_row(lines, n_out, f"layer {i} bias")
            layer.weight.copy_(torch.tensor(weight, dtype=DTYPE))
            layer.bias.copy_(torch.tensor(bias, dtype=DTYPE))

    if lines.next("end") != "end":
        raise WeightsFormatError(
            "more rows than the declared sizes imply",
            "dimension",
            lines.lineno,
        )

    return mlp
