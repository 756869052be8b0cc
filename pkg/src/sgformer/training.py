"""Losses, Adam, training loops, metrics and the grid-search runner."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, MetricError, SGFormerError
from .graph import MULTI_LABEL, NodeDataset, normalize_adjacency
from .memory import AllocationCensus, peak_rss_bytes
from .model import SGFormerParams, forward, predict
from .tensor import Rng, grad, resolve_dtype

log = logging.getLogger(__name__)

EPOCHS_MEDIUM = 300
EPOCHS_LARGE = 1000
EPOCHS_HUGE = 50

GRID = {
    "lr": [0.001, 0.005, 0.01, 0.05, 0.1],
    "weight_decay": [1e-5, 1e-4, 5e-4, 1e-3, 1e-2],
    "hidden": [32, 64, 128, 256],
    "dropout": [0.0, 0.2, 0.3, 0.5],
    "num_gcn_layers": [1, 2, 3],
    "alpha": [0.5, 0.8],
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 64
    dropout: float = 0.5
    num_gcn_layers: int = 2
    alpha: float = 0.8
    beta: float = 0.5
    epochs: int = EPOCHS_MEDIUM
    batch_size: int = 0
    seed: int = 0
    precision: str = "float64"
    num_attn_layers: int = 1
    attention: str = "linear"
    self_loop: bool = True
    eval_full_max_nodes: int = 200_000
    eval_batch_size: int = 0
    eval_seed: int = 0

    def __post_init__(self):
        resolve_dtype(self.precision)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if self.hidden < 1:
            raise ConfigError("hidden must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# Chosen from GRID; not tuned in this environment (no citation data available here).
PRESETS = {
    "cora": TrainConfig(lr=0.01, weight_decay=5e-4, hidden=64, dropout=0.5, num_gcn_layers=2, alpha=0.8),
    "citeseer": TrainConfig(lr=0.005, weight_decay=1e-2, hidden=64, dropout=0.5, num_gcn_layers=2, alpha=0.8),
    "pubmed": TrainConfig(lr=0.01, weight_decay=5e-4, hidden=64, dropout=0.3, num_gcn_layers=2, alpha=0.8),
}


# ------------------------------------------------------------------- losses

def _mask_index(mask, n: int) -> torch.Tensor:
    m = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
    if m.shape != (n,):
        raise ConfigError(f"mask length {tuple(m.shape)} does not match {n} rows")
    if not bool(m.any()):
        raise ConfigError("loss mask selects no rows")
    return m


def cross_entropy(logits: torch.Tensor, labels, mask) -> torch.Tensor:
    """Mean over masked rows of -log softmax(logits)[label]."""
    m = _mask_index(mask, logits.shape[0])
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)[m]
    logp = torch.log_softmax(logits[m], dim=1)
    return -logp.gather(1, y.unsqueeze(1)).mean()


def bce_multilabel(logits: torch.Tensor, label_matrix, mask) -> torch.Tensor:
    m = _mask_index(mask, logits.shape[0])
    y = torch.as_tensor(np.asarray(label_matrix), dtype=logits.dtype)[m]
    return F.binary_cross_entropy_with_logits(logits[m], y, reduction="mean")


def task_loss(logits: torch.Tensor, ds: NodeDataset, mask) -> torch.Tensor:
    if ds.task == MULTI_LABEL:
        return bce_multilabel(logits, ds.labels, mask)
    return cross_entropy(logits, ds.labels, mask)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: list[torch.Tensor]
    v: list[torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState,
              lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One in-place Adam update with bias correction and decoupled weight decay."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("params, grads and optimizer state differ in length")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ConfigError(f"shape mismatch in Adam update: {tuple(p.shape)} vs {tuple(g.shape)}")
            if weight_decay:
                p.mul_(1.0 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))
    return state


# ------------------------------------------------------------------ metrics

def metric_accuracy(predictions, labels, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("accuracy over an empty mask")
    return float(np.mean(np.asarray(predictions)[mask] == np.asarray(labels)[mask]))


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the average of their positions."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [x.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    r = midranks(np.asarray(scores, dtype=np.float64))
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metric_rocauc(scores, labels, mask) -> float:
    """Mean per-task ROC-AUC; tasks whose masked labels are all one class are skipped."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("ROC-AUC over an empty mask")
    s = np.asarray(scores, dtype=np.float64)[mask]
    y = np.asarray(labels)[mask]
    if s.ndim == 1:
        s, y = s[:, None], y[:, None]
    aucs = [binary_auc(s[:, t], y[:, t]) for t in range(y.shape[1]) if 0 < y[:, t].sum() < y.shape[0]]
    if not aucs:
        raise MetricError("every task is single-class under the mask")
    return float(np.mean(aucs))


def evaluate_logits(logits: torch.Tensor, ds: NodeDataset, mask) -> float:
    if ds.task == MULTI_LABEL:
        return metric_rocauc(predict(logits, MULTI_LABEL), ds.labels, mask)
    return metric_accuracy(predict(logits), ds.labels, mask)


def metric_name(ds: NodeDataset) -> str:
    return "rocauc" if ds.task == MULTI_LABEL else "accuracy"


# ------------------------------------------------------------------- report

@dataclass
class TrainReport:
    """Per-epoch history and the test-at-best-valid summary.

    ``epoch_ms`` and ``peak_rss_bytes`` are wall-clock facts and are kept out
    of the canonical JSON so identical seeds give byte-identical reports.
    """

    config: dict
    metric: str
    loss: list[float] = field(default_factory=list)
    valid: list[float] = field(default_factory=list)
    test: list[float] = field(default_factory=list)
    initial_valid: float = float("nan")
    initial_test: float = float("nan")
    best_epoch: int | None = None
    best_valid: float = float("nan")
    test_at_best_valid: float = float("nan")
    accounted_step_bytes: int = 0
    num_parameters: int = 0
    epoch_ms: list[float] = field(default_factory=list)
    peak_rss_bytes: int = 0

    def finalize(self) -> "TrainReport":
        if self.valid:
            best = int(np.argmax(self.valid))      # first maximum, i.e. earliest epoch on ties
            self.best_epoch = best
            self.best_valid = self.valid[best]
            self.test_at_best_valid = self.test[best]
        else:
            self.best_epoch = None
            self.best_valid = self.initial_valid
            self.test_at_best_valid = self.initial_test
        return self

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("epoch_ms")
            d.pop("peak_rss_bytes")
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(self.to_json(), encoding="utf-8")
        (d / "timing.json").write_text(json.dumps(
            {"epoch_ms": self.epoch_ms, "peak_rss_bytes": self.peak_rss_bytes}, indent=2) + "\n", encoding="utf-8")
        with open(d / "history.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "valid", "test", "ms"])
            for i, row in enumerate(zip(self.loss, self.valid, self.test, self.epoch_ms)):
                w.writerow([i, *(repr(float(x)) for x in row)])


# ------------------------------------------------------------------ training

def build_params(ds: NodeDataset, cfg: TrainConfig, rng: Rng) -> SGFormerParams:
    return SGFormerParams.init(
        ds.feat_dim, cfg.hidden, ds.num_classes, rng, dtype=resolve_dtype(cfg.precision),
        alpha=cfg.alpha, beta=cfg.beta, dropout=cfg.dropout, num_gcn_layers=cfg.num_gcn_layers,
        num_attn_layers=cfg.num_attn_layers, attention_kind=cfg.attention, self_loop=cfg.self_loop,
        task=ds.task)


def _check_masks(ds: NodeDataset) -> None:
    ds.validate()
    if not ds.train_mask.any():
        raise ConfigError(f"{ds.name}: empty training mask")
    if not ds.valid_mask.any() or not ds.test_mask.any():
        raise ConfigError(f"{ds.name}: empty validation or test mask")


class _Run:
    """State shared by the full-batch and mini-batch loops."""

    def __init__(self, ds: NodeDataset, cfg: TrainConfig, params: SGFormerParams | None = None):
        _check_masks(ds)
        self.ds, self.cfg = ds, cfg
        self.dtype = resolve_dtype(cfg.precision)
        root = Rng(cfg.seed)
        self.params = params if params is not None else build_params(ds, cfg, root.child(0))
        self.dropout_rng = root.child(1)
        self.shuffle_rng = root.child(2)
        self.state = AdamState.zeros_like(self.params.parameters())
        self.x = torch.as_tensor(ds.features, dtype=self.dtype)
        self.report = TrainReport(cfg.to_dict(), metric_name(ds), num_parameters=self.params.num_parameters())

    def step(self, x, a_hat, batch_ds_mask, labels_view) -> float:
        logits, _ = forward(x, a_hat, self.params, self.dropout_rng, training=True)
        loss = labels_view(logits, batch_ds_mask)
        grads = grad(loss, self.params.parameters())
        adam_step(self.params.parameters(), grads, self.state, self.cfg.lr, self.cfg.weight_decay)
        return float(loss.detach())

    def record_eval(self, logits: torch.Tensor) -> tuple[float, float]:
        return (evaluate_logits(logits, self.ds, self.ds.valid_mask),
                evaluate_logits(logits, self.ds, self.ds.test_mask))


def _epoch_context(epoch: int):
    def wrap(exc: SGFormerError) -> SGFormerError:
        return type(exc)(f"epoch {epoch}: {exc}")
    return wrap


def train_full_batch(ds: NodeDataset, cfg: TrainConfig, params: SGFormerParams | None = None) -> TrainReport:
    """Fixed-epoch full-graph training; test metric is reported at the best validation epoch."""
    run = _Run(ds, cfg, params)
    a_hat = normalize_adjacency(ds.graph).to_torch(run.dtype)
    loss_fn = lambda logits, mask: task_loss(logits, ds, mask)  # noqa: E731

    with torch.no_grad():
        logits, _ = forward(run.x, a_hat, run.params)
    run.report.initial_valid, run.report.initial_test = run.record_eval(logits)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        try:
            if epoch == 0:
                with AllocationCensus() as census:
                    loss = run.step(run.x, a_hat, ds.train_mask, loss_fn)
                run.report.accounted_step_bytes = census.total_bytes
            else:
                loss = run.step(run.x, a_hat, ds.train_mask, loss_fn)
            with torch.no_grad():
                logits, _ = forward(run.x, a_hat, run.params)
        except SGFormerError as exc:
            raise _epoch_context(epoch)(exc) from exc
        valid, test = run.record_eval(logits)
        run.report.epoch_ms.append((time.perf_counter() - t0) * 1e3)
        run.report.loss.append(loss)
        run.report.valid.append(valid)
        run.report.test.append(test)
    run.report.peak_rss_bytes = peak_rss_bytes()
    return run.report.finalize()


def partition(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def batched_inference(ds: NodeDataset, params: SGFormerParams, batch_size: int, seed: int = 0,
                      x: torch.Tensor | None = None) -> torch.Tensor:
    """Logits for every node, computed over a fixed random node partition."""
    dtype = params.dtype
    x = torch.as_tensor(ds.features, dtype=dtype) if x is None else x
    order = Rng(seed).np.permutation(ds.num_nodes)
    out = torch.empty((ds.num_nodes, params.w_out.shape[1]), dtype=dtype)
    with torch.no_grad():
        for batch in partition(order, batch_size):
            a_hat = normalize_adjacency(ds.graph.induced_subgraph(batch)).to_torch(dtype)
            logits, _ = forward(x[batch], a_hat, params)
            out[torch.as_tensor(batch)] = logits
    return out


def train_mini_batch(ds: NodeDataset, cfg: TrainConfig, params: SGFormerParams | None = None) -> TrainReport:
    """Random node partitioning: every epoch reshuffles the nodes into batches of
    ``cfg.batch_size`` and trains on each batch's induced subgraph."""
    if cfg.batch_size < 2:
        raise ConfigError(f"mini-batch training needs batch_size >= 2, got {cfg.batch_size}")
    run = _Run(ds, cfg, params)
    n = ds.num_nodes
    full_eval = n <= cfg.eval_full_max_nodes
    full_a_hat = normalize_adjacency(ds.graph).to_torch(run.dtype) if full_eval else None
    eval_bs = cfg.eval_batch_size or cfg.batch_size

    def evaluate():
        if full_eval:
            with torch.no_grad():
                return forward(run.x, full_a_hat, run.params)[0]
        return batched_inference(ds, run.params, eval_bs, cfg.eval_seed, run.x)

    run.report.initial_valid, run.report.initial_test = run.record_eval(evaluate())

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        # a single batch covering every node keeps the natural order (and the full-batch trajectory)
        order = np.arange(n) if cfg.batch_size >= n else run.shuffle_rng.np.permutation(n)
        losses = []
        try:
            for batch in partition(order, cfg.batch_size):
                train_in_batch = ds.train_mask[batch]
                if not train_in_batch.any():
                    continue
                a_hat = normalize_adjacency(ds.graph.induced_subgraph(batch)).to_torch(run.dtype)
                labels = ds.labels[batch]
                loss_fn = lambda logits, mask, labels=labels: (  # noqa: E731
                    bce_multilabel(logits, labels, mask) if ds.task == MULTI_LABEL
                    else cross_entropy(logits, labels, mask))
                if epoch == 0 and not losses:
                    with AllocationCensus() as census:
                        losses.append(run.step(run.x[batch], a_hat, train_in_batch, loss_fn))
                    run.report.accounted_step_bytes = census.total_bytes
                else:
                    losses.append(run.step(run.x[batch], a_hat, train_in_batch, loss_fn))
            logits = evaluate()
        except SGFormerError as exc:
            raise _epoch_context(epoch)(exc) from exc
        valid, test = run.record_eval(logits)
        run.report.epoch_ms.append((time.perf_counter() - t0) * 1e3)
        run.report.loss.append(float(np.mean(losses)) if losses else float("nan"))
        run.report.valid.append(valid)
        run.report.test.append(test)
    run.report.peak_rss_bytes = peak_rss_bytes()
    return run.report.finalize()


def train(ds: NodeDataset, cfg: TrainConfig, params: SGFormerParams | None = None) -> TrainReport:
    if cfg.batch_size:
        return train_mini_batch(ds, cfg, params)
    return train_full_batch(ds, cfg, params)


def train_with_params(ds: NodeDataset, cfg: TrainConfig) -> tuple[TrainReport, SGFormerParams]:
    """Like :func:`train` but also hands back the trained parameters."""
    run_params = build_params(ds, cfg, Rng(cfg.seed).child(0))
    report = train(ds, cfg, run_params)
    return report, run_params


# -------------------------------------------------------------- grid search

@dataclass
class GridResult:
    best_config: TrainConfig
    best_report: TrainReport
    seed_reports: list[TrainReport]
    mean: float
    std: float
    trials: list[tuple[dict, float]]

    def to_dict(self) -> dict:
        return {
            "best_config": self.best_config.to_dict(),
            "mean": self.mean, "std": self.std,
            "seed_tests": [r.test_at_best_valid for r in self.seed_reports],
            "trials": [{"overrides": o, "valid": v} for o, v in self.trials],
        }


def expand_grid(grids: dict, budget: int | None = None) -> list[dict]:
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("grid search needs a non-empty value list for every key")
    keys = list(grids)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grids[k] for k in keys))]
    return combos[:budget] if budget else combos


def _trial(args) -> float:
    ds, cfg = args
    return train(ds, cfg).best_valid


def seed_summary(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def grid_search(ds: NodeDataset, grids: dict, budget: int | None = None, base: TrainConfig | None = None,
                seeds: Sequence[int] = (0, 1, 2, 3, 4), jobs: int = 1) -> GridResult:
    """Pick the configuration with the highest best-validation metric, then rerun it
    over ``seeds`` and summarize test-at-best-valid as mean and std."""
    base = base or TrainConfig()
    combos = expand_grid(grids, budget)
    configs = [replace(base, **c) for c in combos]
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            valids = list(pool.map(_trial, [(ds, c) for c in configs]))
    else:
        valids = [_trial((ds, c)) for c in configs]
    best_i = int(np.argmax(valids))           # ties -> first in grid order
    best = configs[best_i]
    reports = [train(ds, replace(best, seed=s)) for s in seeds]
    mean, std = seed_summary([r.test_at_best_valid for r in reports])
    return GridResult(best, reports[0], reports, mean, std, list(zip(combos, valids)))
