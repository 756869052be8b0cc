"""Dense matrix primitives, seeded randomness and gradients.

Matrices are 2-D ``torch.Tensor`` objects (row-major, contiguous). Autograd
does the reverse-mode bookkeeping; this module fixes the small operation set
the model needs and the error contracts around it.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError, GraphError, ShapeError

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def resolve_dtype(precision: str | torch.dtype) -> torch.dtype:
    if isinstance(precision, torch.dtype):
        return precision
    try:
        return DTYPES[precision]
    except KeyError:
        raise ConfigError(f"unknown precision {precision!r}; expected one of {sorted(DTYPES)}") from None


class Rng:
    """Seeded generator pair: numpy for index sampling, torch for tensor draws.

    Both streams are derived from one 64-bit seed so a run is reproducible
    from that integer alone.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        ss = np.random.SeedSequence(self.seed)
        np_seed, torch_seed = ss.spawn(2)
        self.np = np.random.default_rng(np_seed)
        self.torch = torch.Generator()
        self.torch.manual_seed(int(torch_seed.generate_state(1, dtype=np.uint64)[0] >> 1))

    def child(self, key: int) -> "Rng":
        """Independent stream keyed by ``key`` (does not advance this one)."""
        mixed = np.random.SeedSequence([self.seed, int(key)]).generate_state(1, dtype=np.uint64)[0]
        return Rng(int(mixed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def frobenius_norm(a: torch.Tensor) -> torch.Tensor:
    return torch.sqrt((a * a).sum())


def frobenius_normalize(a: torch.Tensor) -> torch.Tensor:
    """``a / ||a||_F``; an all-zero matrix maps to itself (0/0 := 0)."""
    norm = frobenius_norm(a)
    if norm.item() == 0.0:
        return a * 0.0
    return a / norm


def relu(a: torch.Tensor) -> torch.Tensor:
    return torch.clamp_min(a, 0.0)


def check_rate(rate: float) -> None:
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")


def dropout(a: torch.Tensor, rate: float, rng: Rng | None, training: bool) -> torch.Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    check_rate(rate)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode needs an Rng")
    keep = torch.rand(a.shape, generator=rng.torch, dtype=a.dtype) >= rate
    return a * keep.to(a.dtype) / (1.0 - rate)


def glorot(fan_in: int, fan_out: int, rng: Rng, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    w = torch.rand((fan_in, fan_out), generator=rng.torch, dtype=dtype)
    return (2.0 * w - 1.0) * s


def grad(loss: torch.Tensor, params: Sequence[torch.Tensor], retain_graph: bool = False) -> list[torch.Tensor]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``."""
    if loss.numel() != 1:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    for i, p in enumerate(params):
        if not p.requires_grad:
            raise GraphError(f"parameter {i} does not require grad")
    grads = torch.autograd.grad(loss, list(params), allow_unused=True, retain_graph=retain_graph)
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise GraphError(f"parameter {i} (shape {tuple(p.shape)}) is unreachable from the loss")
        out.append(g)
    return out
