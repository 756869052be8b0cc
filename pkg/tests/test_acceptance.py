"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Criteria 1, 2, 3 and 9 need the raw citation files (``cora.content`` /
``cora.cites`` and friends) under ``$SGF_DATA_DIR`` (default ``./data``).
They fail, not skip, when the files are absent.
"""

import time
import warnings
from contextlib import contextmanager
from dataclasses import replace

import pytest
import torch

from conftest import ACCEPTANCE, DATA_ROOT, sbm_dataset
from oracles import gradient_check
from sgformer.attention import AttentionParams, dense_attention_oracle, linear_attention
from sgformer.bench import BenchConfig, bench_scaling, fit_complexity, fit_memory
from sgformer.graph import SplitSpec, load_planetoid_dir, make_split
from sgformer.tensor import Rng
from sgformer.theory import random_theorem1_instance, verify_theorem1, verify_theorem2
from sgformer.training import PRESETS, TrainConfig, seed_summary, train

SEEDS = (0, 1, 2, 3, 4)


@contextmanager
def criterion(number: int, tag: str = ""):
    """Record PASS/FAIL for ``number`` whatever way the body exits."""
    state = {"detail": ""}
    key = (number, tag)
    label = f"{number} ({tag})" if tag else f"{number}"
    try:
        yield state
    except BaseException as exc:
        detail = state["detail"] or f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE[key] = ("FAIL", detail)
        print(f"criterion {label}: FAIL {detail}")
        raise
    else:
        status = state.get("status", "PASS")
        ACCEPTANCE[key] = (status, state["detail"])
        print(f"criterion {label}: {status} {state['detail']}")


def citation(name: str):
    ds = load_planetoid_dir(DATA_ROOT, name)
    return ds.with_masks(make_split(ds, SplitSpec.semi_supervised(), Rng(0)))


def mean_accuracy(ds, cfg: TrainConfig) -> tuple[float, float]:
    tests = [train(ds, replace(cfg, seed=s)).test_at_best_valid for s in SEEDS]
    mean, std = seed_summary(tests)
    return 100 * mean, 100 * std


def test_criterion_01_cora_reproduction():
    with criterion(1) as c:
        t0 = time.perf_counter()
        mean, std = mean_accuracy(citation("cora"), PRESETS["cora"])
        elapsed = time.perf_counter() - t0
        c["detail"] = f"cora accuracy {mean:.2f} ± {std:.2f} (target 84.5 ± 2.0), {elapsed:.0f} s"
        assert abs(mean - 84.5) <= 2.0
        assert elapsed < 600


def test_criterion_02_gcn_branch_only():
    with criterion(2) as c:
        mean, std = mean_accuracy(citation("cora"), replace(PRESETS["cora"], alpha=1.0))
        c["detail"] = f"cora alpha=1 accuracy {mean:.2f} ± {std:.2f} (target 81.6 ± 2.0)"
        assert abs(mean - 81.6) <= 2.0


@pytest.mark.parametrize("name,target", [("citeseer", 72.6), ("pubmed", 80.3)])
def test_criterion_03_citeseer_pubmed(name, target):
    with criterion(3, name) as c:
        mean, std = mean_accuracy(citation(name), PRESETS[name])
        gap = abs(mean - target)
        c["detail"] = f"{name} accuracy {mean:.2f} ± {std:.2f} (target {target} ± 2.5, soft to 4.0)"
        if 2.5 < gap <= 4.0:
            c["status"] = "PASS (soft: warning)"
            warnings.warn(f"{name}: {mean:.2f} is {gap:.2f} points from {target}")
        assert gap <= 4.0


def test_criterion_04_theorem1():
    with criterion(4) as c:
        t0 = time.perf_counter()
        rng = Rng(4)
        worst = max(verify_theorem1(*random_theorem1_instance(rng.child(i), max_n=200)) for i in range(100))
        elapsed = time.perf_counter() - t0
        c["detail"] = f"max discrepancy {worst:.2e} over 100 instances (< 1e-10), {elapsed:.2f} s"
        assert worst < 1e-10 and elapsed < 30


def test_criterion_05_theorem2():
    with criterion(5) as c:
        t0 = time.perf_counter()
        worst = {k: verify_theorem2(k, 200, 16, Rng(500 + k)) for k in (1, 2, 4, 8)}
        elapsed = time.perf_counter() - t0
        c["detail"] = ", ".join(f"K={k}: {v:.2e}" for k, v in worst.items()) + f" (< 1e-8), {elapsed:.2f} s"
        assert max(worst.values()) < 1e-8 and elapsed < 60


def test_criterion_06_factored_equals_dense():
    with criterion(6) as c:
        rng = Rng(6)
        diff, row = 0.0, 0.0
        for i in range(30):
            r = rng.child(i)
            n, d = int(r.np.integers(1, 1001)), int(r.np.integers(1, 33))
            z0 = torch.randn(n, d, generator=r.torch, dtype=torch.float64)
            p = AttentionParams.init(d, r, beta=float(r.np.uniform(0.05, 1.0)))
            dense = dense_attention_oracle(z0, p)
            diff = max(diff, torch.max(torch.abs(linear_attention(z0, p).z - dense.z)).item())
            row = max(row, torch.max(torch.abs(dense.coefficients.sum(dim=1) - 1)).item())
        c["detail"] = f"max |factored - dense| {diff:.2e} (< 1e-10), max row-sum error {row:.2e} (< 1e-9)"
        assert diff < 1e-10 and row < 1e-9


@pytest.mark.slow
def test_criterion_07_linear_scaling():
    with criterion(7) as c:
        lin = bench_scaling([10_000, 20_000, 40_000, 80_000], ["linear"], BenchConfig())
        time_fit = fit_complexity(lin, "linear")["linear"]
        mem_fit = fit_memory(lin, "linear")
        # softmax-dense only on sizes whose N x N buffers fit in this machine's memory
        dense = bench_scaling([2000, 4000, 8000], ["softmax-dense"], BenchConfig())
        dense_fit = fit_complexity(dense, "softmax-dense")["softmax-dense"]
        c["detail"] = (f"linear exponent {time_fit.exponent:.3f} (in [0.8, 1.3]), memory R^2 {mem_fit.r2:.5f} "
                       f"(> 0.98), softmax-dense exponent {dense_fit.exponent:.3f} (>= 1.7)")
        assert 0.8 <= time_fit.exponent <= 1.3
        assert mem_fit.r2 > 0.98
        assert dense_fit.exponent >= 1.7


def test_criterion_08_gradient_check():
    with criterion(8) as c:
        worst = gradient_check(n=12, coords=20, seed=8)
        c["detail"] = f"max relative error {worst:.2e} over 20 coordinates per parameter (< 1e-4)"
        assert worst < 1e-4


def test_criterion_09_layer_ablation():
    with criterion(9) as c:
        ds = citation("cora")
        one, _ = mean_accuracy(ds, replace(PRESETS["cora"], num_attn_layers=1))
        two, _ = mean_accuracy(ds, replace(PRESETS["cora"], num_attn_layers=2))
        c["detail"] = f"1 layer {one:.2f} vs 2 layers {two:.2f} (need 1-layer >= 2-layer - 1.0)"
        assert one >= two - 1.0


def test_criterion_10_determinism():
    with criterion(10) as c:
        ds = sbm_dataset(n=300, feat=16)
        full = TrainConfig(epochs=30, hidden=16, precision="float64")
        mini = replace(full, batch_size=64)
        same = [train(ds, cfg).to_json() == train(ds, cfg).to_json() for cfg in (full, mini)]
        c["detail"] = f"full-batch identical: {same[0]}, mini-batch identical: {same[1]}"
        assert all(same)
