import os
from pathlib import Path

import numpy as np
import pytest
import torch

from sgformer.graph import SplitSpec, generate_sbm, make_split
from sgformer.tensor import Rng

DATA_ROOT = Path(os.environ.get("SGF_DATA_DIR", Path(__file__).resolve().parents[1] / "data"))

# (criterion number, tag) -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[tuple[int, str], tuple[str, str]] = {}


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def sbm_dataset(n=120, blocks=3, p_in=0.15, p_out=0.01, feat=8, seed=0, split=(0.4, 0.3, 0.3)):
    ds = generate_sbm(n, blocks, p_in, p_out, feat, Rng(seed))
    return ds.with_masks(make_split(ds, SplitSpec.ratio(*split), Rng(seed + 1)))


@pytest.fixture
def small_sbm():
    return sbm_dataset()


@pytest.fixture(autouse=True)
def _single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(prev)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, tag in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number, tag]
        label = f"{number:2d}" + (f" ({tag})" if tag else "")
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}")
