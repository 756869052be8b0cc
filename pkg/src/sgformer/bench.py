"""Epoch time and accounted memory versus graph size."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .attention import DENSE_GUARD
from .errors import AnalysisError, ConfigError, SizeError
from .graph import NodeDataset, generate_sbm, normalize_adjacency, subsample_nodes
from .memory import AllocationCensus, peak_rss_bytes
from .model import SGFormerParams, forward
from .tensor import Rng, grad, resolve_dtype
from .training import AdamState, adam_step, cross_entropy

log = logging.getLogger(__name__)

DEFAULT_SIZES = (10_000, 20_000, 40_000, 80_000)
EXTENDED_SIZES = DEFAULT_SIZES + (100_000,)
VARIANTS = ("linear", "softmax-dense")

# softmax-dense keeps several N x N float buffers alive through backward
DENSE_BUFFERS = 6


@dataclass
class BenchConfig:
    hidden: int = 64
    feat_dim: int = 32
    blocks: int = 10
    avg_degree: float = 10.0
    homophily: float = 0.8
    warmup: int = 2
    epochs: int = 5
    seed: int = 0
    precision: str = "float32"
    threads: int = 1
    dense_guard: int = DENSE_GUARD
    memory_budget_bytes: int = 2 * 1024**3
    lr: float = 0.01

    def __post_init__(self):
        resolve_dtype(self.precision)
        if self.epochs < 5:
            raise ConfigError("timing statistics need at least 5 measured epochs")
        if self.warmup < 0 or self.threads < 1:
            raise ConfigError("warmup must be >= 0 and threads >= 1")


@dataclass
class BenchResult:
    variant: str
    n: int
    e: int
    ms_mean: float = float("nan")
    ms_std: float = float("nan")
    mem_bytes: int = 0
    max_tensor_numel: int = 0
    rss_bytes: int = 0
    threads: int = 1
    skipped: str = ""

    @property
    def ok(self) -> bool:
        return not self.skipped


@dataclass
class Fit:
    exponent: float
    intercept: float
    r2: float
    points: int


def sbm_for_size(n: int, cfg: BenchConfig, rng: Rng) -> NodeDataset:
    """SBM with a fixed expected degree, so E grows linearly with N."""
    block = n / cfg.blocks
    p_in = min(1.0, cfg.avg_degree * cfg.homophily / max(block - 1, 1))
    p_out = min(1.0, cfg.avg_degree * (1.0 - cfg.homophily) / max(n - block, 1))
    return generate_sbm(n, cfg.blocks, p_in, p_out, cfg.feat_dim, rng)


def _dense_fits(n: int, cfg: BenchConfig, dtype: torch.dtype) -> str:
    if n > cfg.dense_guard:
        return f"N={n} exceeds dense guard {cfg.dense_guard}"
    need = DENSE_BUFFERS * n * n * torch.tensor([], dtype=dtype).element_size()
    if need > cfg.memory_budget_bytes:
        return f"N={n} needs ~{need / 2**30:.1f} GiB for dense attention (budget {cfg.memory_budget_bytes / 2**30:.1f})"
    return ""


def _epoch_fn(ds: NodeDataset, variant: str, cfg: BenchConfig):
    dtype = resolve_dtype(cfg.precision)
    kind = "linear" if variant == "linear" else "softmax"
    params = SGFormerParams.init(ds.feat_dim, cfg.hidden, ds.num_classes, Rng(cfg.seed).child(0),
                                 dtype=dtype, attention_kind=kind)
    x = torch.as_tensor(ds.features, dtype=dtype)
    a_hat = normalize_adjacency(ds.graph).to_torch(dtype)
    labels, mask = ds.labels, np.ones(ds.num_nodes, dtype=bool)
    state = AdamState.zeros_like(params.parameters())

    def epoch():
        logits, _ = forward(x, a_hat, params)
        loss = cross_entropy(logits, labels, mask)
        grads = grad(loss, params.parameters())
        adam_step(params.parameters(), grads, state, cfg.lr)

    return epoch


def bench_one(ds: NodeDataset, variant: str, cfg: BenchConfig) -> BenchResult:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown bench variant {variant!r}; choose from {VARIANTS}")
    res = BenchResult(variant, ds.num_nodes, ds.graph.num_undirected_edges(), threads=cfg.threads)
    if variant == "softmax-dense":
        res.skipped = _dense_fits(ds.num_nodes, cfg, resolve_dtype(cfg.precision))
        if res.skipped:
            log.info("skipping %s: %s", variant, res.skipped)
            return res
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(cfg.threads)
    try:
        epoch = _epoch_fn(ds, variant, cfg)
        with AllocationCensus() as census:
            epoch()
        for _ in range(max(cfg.warmup - 1, 0)):
            epoch()
        times = []
        for _ in range(cfg.epochs):
            t0 = time.perf_counter()
            epoch()
            times.append((time.perf_counter() - t0) * 1e3)
    except (SizeError, MemoryError) as exc:
        res.skipped = str(exc) or type(exc).__name__
        return res
    finally:
        torch.set_num_threads(prev_threads)
    res.ms_mean = float(np.mean(times))
    res.ms_std = float(np.std(times))
    res.mem_bytes = census.total_bytes
    res.max_tensor_numel = census.max_numel
    res.rss_bytes = peak_rss_bytes()
    return res


def bench_scaling(sizes: Sequence[int], variants: Sequence[str] = ("linear",),
                  cfg: BenchConfig | None = None, base: NodeDataset | None = None) -> list[BenchResult]:
    """One result per (size, variant). Graphs come from ``base`` subsampling when
    given, else from a fixed-degree SBM. Datasets are never modified."""
    cfg = cfg or BenchConfig()
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ConfigError("bench sizes must be ascending")
    results = []
    for i, n in enumerate(sizes):
        rng = Rng(cfg.seed).child(100 + i)
        ds = subsample_nodes(base, n, rng) if base is not None else sbm_for_size(n, cfg, rng)
        for v in variants:
            results.append(bench_one(ds, v, cfg))
            r = results[-1]
            log.info("%s N=%d E=%d %.1f ms %s", v, r.n, r.e, r.ms_mean, r.skipped)
    return results


def loglog_fit(ns, ys) -> Fit:
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(ys, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    return Fit(float(slope), float(intercept), r_squared(y, slope * x + intercept), len(x))


def r_squared(y, fitted) -> float:
    y = np.asarray(y, dtype=np.float64)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot


def linear_fit(x, y) -> Fit:
    """y = a x + b; ``exponent`` holds the slope a."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    return Fit(float(a), float(b), r_squared(y, a * x + b), len(x))


def _measured(results, variant):
    return [r for r in results if r.variant == variant and r.ok]


def fit_complexity(results: Sequence[BenchResult], variant: str | None = None) -> dict[str, Fit]:
    """Least-squares slope of log(ms) against log(N) for each variant."""
    names = [variant] if variant else sorted({r.variant for r in results if r.ok})
    fits = {}
    for v in names:
        pts = _measured(results, v)
        if len({r.n for r in pts}) < 3:
            raise AnalysisError(f"{v}: need at least 3 measured sizes to fit an exponent, got {len(pts)}")
        fits[v] = loglog_fit([r.n for r in pts], [r.ms_mean for r in pts])
    return fits


def fit_memory(results: Sequence[BenchResult], variant: str, power: int = 1) -> Fit:
    """Fit accounted bytes against N**power."""
    pts = _measured(results, variant)
    if len(pts) < 3:
        raise AnalysisError(f"{variant}: need at least 3 measured sizes to fit memory, got {len(pts)}")
    return linear_fit([float(r.n) ** power for r in pts], [r.mem_bytes for r in pts])


def time_ratios(results: Sequence[BenchResult], variant: str) -> list[float]:
    pts = _measured(results, variant)
    return [b.ms_mean / a.ms_mean for a, b in zip(pts, pts[1:])]


def write_results(results: Sequence[BenchResult], directory, fits: dict | None = None,
                  cfg: BenchConfig | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "N", "E", "ms_mean", "ms_std", "mem_bytes"])
        for r in results:
            w.writerow([r.variant, r.n, r.e, r.ms_mean, r.ms_std, r.mem_bytes if r.ok else ""])
    summary = {
        "config": asdict(cfg) if cfg else None,
        "fits": {k: asdict(v) for k, v in (fits or {}).items()},
        "results": [asdict(r) for r in results],
    }
    text = json.dumps(summary, indent=2, default=lambda o: None if isinstance(o, float) and math.isnan(o) else o)
    (d / "bench.json").write_text(text + "\n", encoding="utf-8")
