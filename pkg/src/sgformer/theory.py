"""Attention layers as gradient steps on a graph-signal denoising energy.

Everything here runs in numpy float64 regardless of the model precision.

Two gradients are provided. ``denoise_gradient`` is the per-node form that
makes one step of size tau/(2*lambda) from the anchor reproduce the attention
update ``(1 - tau) z_u + tau * sum_v c_uv z_v``. It differentiates only the
outgoing pair terms, so it equals the true gradient of ``energy`` when C is
symmetric and lambda is halved. ``energy_gradient`` is the exact gradient,
kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError, ShapeError
from .tensor import Rng

ROW_SUM_TOL = 1e-9


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def row_sum_violation(c: np.ndarray) -> float:
    return float(np.max(np.abs(c.sum(axis=1) - 1.0))) if c.size else 0.0


def check_row_stochastic(c: np.ndarray, name: str = "C", tol: float = ROW_SUM_TOL) -> None:
    err = row_sum_violation(c)
    if err > tol:
        raise PreconditionError(f"{name} rows must sum to 1 (max deviation {err:.3e} > {tol})")


@dataclass(frozen=True)
class DenoiseProblem:
    z_ref: np.ndarray
    c: np.ndarray
    lam: float
    tau: float = 1.0
    check_rows: bool = True

    def __post_init__(self):
        z_ref = _as_matrix(self.z_ref, "z_ref")
        c = _as_matrix(self.c, "C")
        object.__setattr__(self, "z_ref", z_ref)
        object.__setattr__(self, "c", c)
        n = z_ref.shape[0]
        if c.shape != (n, n):
            raise ShapeError(f"C must be {n}x{n}, got {c.shape}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.check_rows:
            check_row_stochastic(c)

    @property
    def step_size(self) -> float:
        return self.tau / (2.0 * self.lam)


def _check_z(z, prob: DenoiseProblem) -> np.ndarray:
    z = _as_matrix(z, "Z")
    if z.shape != prob.z_ref.shape:
        raise ShapeError(f"Z has shape {z.shape}, expected {prob.z_ref.shape}")
    return z


def energy(z, prob: DenoiseProblem, lam: float | None = None) -> float:
    """sum_u |z_u - zref_u|^2 + lam * sum_{u,v} c_uv |z_u - z_v|^2"""
    z = _check_z(z, prob)
    lam = prob.lam if lam is None else lam
    fit = float(np.sum((z - prob.z_ref) ** 2))
    sq = np.sum(z * z, axis=1)
    pair = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    return fit + lam * float(np.sum(prob.c * pair))


def denoise_gradient(z, prob: DenoiseProblem) -> np.ndarray:
    """2 (z_u - zref_u) + 2 lam sum_v c_uv (z_u - z_v), row by row."""
    z = _check_z(z, prob)
    smooth = prob.c.sum(axis=1, keepdims=True) * z - prob.c @ z
    return 2.0 * (z - prob.z_ref) + 2.0 * prob.lam * smooth


def energy_gradient(z, prob: DenoiseProblem) -> np.ndarray:
    """Exact gradient of ``energy``: the pair weight is c_uv + c_vu."""
    z = _check_z(z, prob)
    s = prob.c + prob.c.T
    smooth = s.sum(axis=1, keepdims=True) * z - s @ z
    return 2.0 * (z - prob.z_ref) + 2.0 * prob.lam * smooth


def gradient_step(prob: DenoiseProblem, z_start) -> np.ndarray:
    return _check_z(z_start, prob) - prob.step_size * denoise_gradient(z_start, prob)


def propagate(z_prev, c, tau: float) -> np.ndarray:
    """(1 - tau) Z + tau C Z"""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    return (1.0 - tau) * z_prev + tau * (np.asarray(c, dtype=np.float64) @ z_prev)


def verify_theorem1(z_prev, c, tau: float, lam: float) -> float:
    """Max |attention update - gradient step| with anchor and start both at ``z_prev``."""
    prob = DenoiseProblem(z_prev, c, lam, tau)
    return float(np.max(np.abs(propagate(prob.z_ref, prob.c, tau) - gradient_step(prob, prob.z_ref))))


def propagation_matrix(c, tau: float) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return (1.0 - tau) * np.eye(c.shape[0]) + tau * c


def collapse_to_one_layer(cs, tau: float, tau_star: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold K propagation layers into one.

    P* = P_K ... P_1 with P_k = (1 - tau) I + tau C_k, and C* = (P* - (1 - tau*) I) / tau*.
    """
    cs = [_as_matrix(c, f"C[{k}]") for k, c in enumerate(cs)]
    if not cs:
        raise ConfigError("collapse needs at least one coefficient matrix")
    for name, t in (("tau", tau), ("tau_star", tau_star)):
        if not 0.0 < t <= 1.0:
            raise ConfigError(f"{name} must lie in (0, 1], got {t}")
    n = cs[0].shape[0]
    p_star = np.eye(n)
    for k, c in enumerate(cs):
        if c.shape != (n, n):
            raise ShapeError(f"C[{k}] has shape {c.shape}, expected {(n, n)}")
        check_row_stochastic(c, f"C[{k}]")
        p_star = propagation_matrix(c, tau) @ p_star
    c_star = (p_star - (1.0 - tau_star) * np.eye(n)) / tau_star
    return p_star, c_star


def random_row_stochastic(n: int, rng: Rng, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of Gaussian logits: strictly positive, rows sum to 1."""
    logits = scale * rng.np.standard_normal((n, n))
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def verify_theorem2(k: int, n: int, d: int, rng: Rng, tau: float | None = None,
                    tau_star: float | None = None, lam: float = 1.0) -> float:
    """Max |K-layer propagation - one gradient step with the collapsed C*|."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    tau = float(rng.np.uniform(0.1, 1.0)) if tau is None else tau
    tau_star = float(rng.np.uniform(0.1, 1.0)) if tau_star is None else tau_star
    cs = [random_row_stochastic(n, rng) for _ in range(k)]
    z0 = rng.np.standard_normal((n, d))
    z = z0
    for c in cs:
        z = propagate(z, c, tau)
    _, c_star = collapse_to_one_layer(cs, tau, tau_star)
    prob = DenoiseProblem(z0, c_star, lam, tau_star)
    return float(np.max(np.abs(z - gradient_step(prob, z0))))


def random_theorem1_instance(rng: Rng, max_n: int = 200, max_d: int = 16):
    n = int(rng.np.integers(2, max_n + 1))
    d = int(rng.np.integers(1, max_d + 1))
    z = rng.np.standard_normal((n, d))
    c = random_row_stochastic(n, rng)
    tau = float(rng.np.uniform(0.05, 1.0))
    lam = float(rng.np.uniform(0.1, 10.0))
    return z, c, tau, lam
