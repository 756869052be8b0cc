"""Shallow GCN branch over a normalized adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError, ShapeError
from .graph import SparseGraph
from .tensor import Rng, check_rate, dropout, glorot, relu

MAX_GCN_LAYERS = 3


@dataclass
class GCNParams:
    weights: list[torch.Tensor] = field(default_factory=list)
    dropout: float = 0.0

    def __post_init__(self):
        if not 1 <= len(self.weights) <= MAX_GCN_LAYERS:
            raise ConfigError(f"GCN depth must be 1..{MAX_GCN_LAYERS}, got {len(self.weights)}")
        check_rate(self.dropout)

    @classmethod
    def init(cls, d: int, num_layers: int, rng: Rng, dtype: torch.dtype = torch.float64,
             dropout: float = 0.0) -> "GCNParams":
        return cls([glorot(d, d, rng, dtype) for _ in range(num_layers)], dropout)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[torch.Tensor]:
        return list(self.weights)


def as_operator(a_hat: SparseGraph | torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
    if isinstance(a_hat, SparseGraph):
        return a_hat.to_torch(dtype)
    return a_hat


def spmm(a_hat: SparseGraph | torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Sparse (CSR) times dense; rows accumulate in column order."""
    a = as_operator(a_hat, z.dtype)
    if a.shape[1] != z.shape[0]:
        raise ShapeError(f"spmm: adjacency over {a.shape[1]} nodes vs {z.shape[0]} rows")
    return a @ z


def gcn_forward(z0: torch.Tensor, a_hat: SparseGraph | torch.Tensor, p: GCNParams,
                rng: Rng | None = None, training: bool = False) -> torch.Tensor:
    """Z <- relu(dropout(A Z W)) for hidden layers; the last layer is A Z W."""
    a = as_operator(a_hat, z0.dtype)
    z = z0
    last = p.num_layers - 1
    for i, w in enumerate(p.weights):
        if z.shape[1] != w.shape[0]:
            raise ShapeError(f"GCN layer {i}: input width {z.shape[1]} vs weight {tuple(w.shape)}")
        z = spmm(a, z) @ w
        if i < last:
            z = relu(dropout(z, p.dropout, rng, training))
    return z
