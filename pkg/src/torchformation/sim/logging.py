from abc import ABC, abstractmethod
from collections import OrderedDict
import logging
from typing import Any, TypeAlias

import torch

from torchformation.utils.torch import dict_stack

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor


class Logger(ABC):
    @abstractmethod
    def update(self, data: Any, step: int, **extra_context) -> None: ...


class MonotoneIntegerDict(OrderedDict):
    def __setitem__(self, key, value):
        assert isinstance(key, int)
        if bool(self):
            assert key > next(reversed(self.keys()))
        super().__setitem__(key, value)


class RunLogger(Logger):
    """
    Collects one row of tensors per control update of one vehicle, keyed
    by plant tick, and serves them stacked as a dict of tensors. String
    fields (solver status) are kept separately.
    """

    def __init__(self):
        self._data = MonotoneIntegerDict()
        self._labels = MonotoneIntegerDict()

    def update(
        self, data: dict[str, Tensor], step: int, status: str = ""
    ) -> None:
        self._data[step] = data
        self._labels[step] = status

    def __len__(self) -> int:
        return len(self._data)

    @property
    def data(self) -> dict[int, dict[str, Tensor]]:
        return self._data

    def get_status(self) -> list[str]:
        return list(self._labels.values())

    def get_data(self) -> dict[str, Tensor]:
        if not self._data:
            return {}
        steps, data = zip(*self._data.items())
        steps = torch.tensor(steps, dtype=torch.long)
        data = dict_stack(data)

        return {"steps": steps} | data
