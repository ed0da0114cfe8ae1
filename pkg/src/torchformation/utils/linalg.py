from typing import TypeAlias

import torch

Tensor: TypeAlias = torch.Tensor


def dot(x: Tensor, y: Tensor) -> Tensor:
    return torch.einsum("...i,...i->...", x, y)


def mv(M: Tensor, v: Tensor) -> Tensor:
    return torch.einsum("...ij,...j->...i", M, v)


def block_diag_repeat(M: Tensor, n: int) -> Tensor:
    """Block-diagonal matrix with ``n`` copies of ``M``."""
    return torch.block_diag(*[M for _ in range(n)])


def is_symmetric(M: Tensor, atol: float = 1e-10) -> bool:
    return bool(torch.allclose(M, M.transpose(-2, -1), atol=atol, rtol=0))


def is_positive_semidefinite(M: Tensor, atol: float = 1e-10) -> bool:
    if not is_symmetric(M, atol):
        return False
    return bool(torch.linalg.eigvalsh(M).min() >= -atol)


def is_hurwitz(M: Tensor) -> bool:
    return bool(torch.linalg.eigvals(M).real.max() < 0)
