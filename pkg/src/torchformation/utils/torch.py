from collections.abc import Iterable, Sequence

import numpy as np
import torch

Tensor = torch.Tensor

DTYPE = torch.float64


def as_tensor(x, dtype: torch.dtype = DTYPE) -> Tensor:
    """Float64 tensor from anything array-like (no copy if already one)."""
    return torch.as_tensor(x, dtype=dtype)


def all_finite(*tensors: Tensor) -> bool:
    return all(bool(torch.isfinite(t).all()) for t in tensors)


def to_numpy(x: Tensor) -> np.ndarray:
    return x.detach().cpu().numpy()


def dict_stack(
    dicts: Iterable[dict[str, Tensor]], dim: int = 0, strict: bool = True
) -> dict[str, Tensor]:
    dicts = list(dicts)
    keys = list(dict.fromkeys(k for d in dicts for k in d.keys()))
    if strict:
        return {k: torch.stack([d[k] for d in dicts], dim=dim) for k in keys}
    else:
        return {
            k: torch.stack([d[k] for d in dicts if k in d], dim=dim)
            for k in keys
        }


def flatten_columns(
    data: dict[str, Tensor], names: dict[str, Sequence[str]] | None = None
) -> dict[str, np.ndarray]:
    """
    Split stacked (n, k) tensors into k named 1d columns.

    Example:

        >>> flatten_columns({"p": torch.zeros(5, 3)}, {"p": "xyz"})
        {'p_x': array(...), 'p_y': array(...), 'p_z': array(...)}

    """
    names = names or {}
    columns = {}
    for key, value in data.items():
        value = to_numpy(value)
        if value.ndim == 1:
            columns[key] = value
            continue
        suffixes = names.get(key, [str(i) for i in range(value.shape[1])])
        for i, suffix in enumerate(suffixes):
            columns[f"{key}_{suffix}"] = value[:, i]
    return columns
