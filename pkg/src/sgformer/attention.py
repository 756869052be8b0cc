"""Simple global attention in factored O(N d^2) form, plus dense references.

The factored path never builds an N x N matrix: it forms ``K~^T V`` (d x d)
and ``K~^T 1`` (d) first and then left-multiplies by ``Q~``. The dense paths
(coefficient oracle, softmax attention) materialize C and are guarded by
``DENSE_GUARD``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError, DegeneracyError, ShapeError, SizeError
from .tensor import Rng, frobenius_normalize, glorot

DENSE_GUARD = 20_000
DEGENERACY_EPS = 1e-12

WITH_SELF_LOOP = "with-self-loop"
WITHOUT_SELF_LOOP = "without-self-loop"


@dataclass
class AttentionParams:
    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    beta: float = 0.5

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            if tuple(getattr(self, name).shape) != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {tuple(getattr(self, name).shape)}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")

    @classmethod
    def init(cls, d: int, rng: Rng, dtype: torch.dtype = torch.float64, beta: float = 0.5) -> "AttentionParams":
        return cls(glorot(d, d, rng, dtype), glorot(d, d, rng, dtype), glorot(d, d, rng, dtype), beta)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def parameters(self) -> list[torch.Tensor]:
        return [self.w_q, self.w_k, self.w_v]


@dataclass
class AttentionOutput:
    z: torch.Tensor
    coefficients: torch.Tensor | None = None


def _check_input(z0: torch.Tensor, p: AttentionParams) -> None:
    if z0.dim() != 2 or z0.shape[0] < 1:
        raise ShapeError(f"attention input must be N x d with N >= 1, got {tuple(z0.shape)}")
    if z0.shape[1] != p.dim:
        raise ShapeError(f"attention input width {z0.shape[1]} != parameter width {p.dim}")


def _guard(n: int, guard: int) -> None:
    if n > guard:
        raise SizeError(f"dense attention over {n} nodes exceeds the materialization guard {guard}")


def _normalized_qkv(z0: torch.Tensor, p: AttentionParams):
    q = frobenius_normalize(z0 @ p.w_q)
    k = frobenius_normalize(z0 @ p.w_k)
    v = z0 @ p.w_v
    return q, k, v


def _check_normalizer(denom: torch.Tensor) -> None:
    low = torch.min(denom)
    if low.item() <= DEGENERACY_EPS:
        row = int(torch.argmin(denom).item())
        raise DegeneracyError(f"attention normalizer at row {row} is {low.item():.3e} (must exceed {DEGENERACY_EPS})")


def linear_attention(z0: torch.Tensor, p: AttentionParams, beta: float | None = None) -> AttentionOutput:
    _check_input(z0, p)
    beta = p.beta if beta is None else beta
    n = z0.shape[0]
    q, k, v = _normalized_qkv(z0, p)
    kv = k.T @ v                        # d x d
    k_sum = k.sum(dim=0)                # d, i.e. K~^T 1
    denom = 1.0 + (q @ k_sum) / n
    _check_normalizer(denom)
    num = v + (q @ kv) / n
    z = beta * num / denom.unsqueeze(1) + (1.0 - beta) * z0
    return AttentionOutput(z)


def attention_coefficients(z0: torch.Tensor, p: AttentionParams, guard: int = DENSE_GUARD) -> torch.Tensor:
    """Dense N x N coefficients, one row at a time from the pairwise score formula.

    c_uu = (N + s_uu) / (N + sum_w s_uw),  c_uv = s_uv / (N + sum_w s_uw)
    with s_uv = q~_u . k~_v.
    """
    _check_input(z0, p)
    n = z0.shape[0]
    _guard(n, guard)
    q, k, _ = _normalized_qkv(z0, p)
    rows = []
    for u in range(n):
        s = k @ q[u]
        denom = n + s.sum()
        if denom.item() / n <= DEGENERACY_EPS:
            raise DegeneracyError(f"attention normalizer at row {u} is {denom.item() / n:.3e}")
        row = s / denom
        row = row + torch.nn.functional.one_hot(torch.tensor(u), n).to(row.dtype) * (n / denom)
        rows.append(row)
    return torch.stack(rows)


def dense_attention_oracle(z0: torch.Tensor, p: AttentionParams, guard: int = DENSE_GUARD,
                           beta: float | None = None) -> AttentionOutput:
    beta = p.beta if beta is None else beta
    c = attention_coefficients(z0, p, guard)
    v = z0 @ p.w_v
    return AttentionOutput(beta * (c @ v) + (1.0 - beta) * z0, c)


def softmax_attention(z0: torch.Tensor, p: AttentionParams, guard: int = DENSE_GUARD,
                      beta: float | None = None) -> AttentionOutput:
    _check_input(z0, p)
    _guard(z0.shape[0], guard)
    beta = p.beta if beta is None else beta
    q, k, v = z0 @ p.w_q, z0 @ p.w_k, z0 @ p.w_v
    c = torch.softmax((q @ k.T) / math.sqrt(p.dim), dim=1)
    return AttentionOutput(beta * (c @ v) + (1.0 - beta) * z0, c)


def multilayer_attention(z0: torch.Tensor, params: Sequence[AttentionParams], mode: str = WITH_SELF_LOOP,
                         kind: str = "linear", guard: int = DENSE_GUARD) -> torch.Tensor:
    """Stack of independently parameterized attention layers.

    ``without-self-loop`` drops the residual term, i.e. runs every layer at beta = 1.
    """
    if not params:
        raise ConfigError("multilayer attention needs at least one layer")
    if mode not in (WITH_SELF_LOOP, WITHOUT_SELF_LOOP):
        raise ConfigError(f"unknown attention mode {mode!r}")
    z = z0
    for p in params:
        beta = 1.0 if mode == WITHOUT_SELF_LOOP else p.beta
        if kind == "linear":
            z = linear_attention(z, p, beta=beta).z
        elif kind == "softmax":
            z = softmax_attention(z, p, guard=guard, beta=beta).z
        elif kind == "dense":
            z = dense_attention_oracle(z, p, guard=guard, beta=beta).z
        else:
            raise ConfigError(f"unknown attention kind {kind!r}")
    return z


def export_attention(coefficients: torch.Tensor, path) -> Path:
    """Write C as CSV: a first line holding N, then N comma-separated rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c = coefficients.detach().cpu().double().numpy()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{c.shape[0]}\n")
        np.savetxt(fh, c, delimiter=",", fmt="%.17g")
    return path
