import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from sgformer.attention import (WITH_SELF_LOOP, WITHOUT_SELF_LOOP, AttentionParams, attention_coefficients,
                                dense_attention_oracle, export_attention, linear_attention,
                                multilayer_attention, softmax_attention)
from sgformer.errors import ConfigError, DegeneracyError, ShapeError, SizeError
from sgformer.memory import AllocationCensus
from sgformer.tensor import Rng


def instance(n, d, seed, beta=0.5):
    rng = Rng(seed)
    z0 = torch.randn(n, d, generator=rng.torch, dtype=torch.float64)
    return z0, AttentionParams.init(d, rng, beta=beta)


def t(x):
    return torch.tensor(x, dtype=torch.float64)


@pytest.mark.parametrize("n,d,seed", [(1, 3, 0), (2, 2, 1), (17, 4, 2), (64, 8, 3), (300, 16, 4)])
def test_factored_matches_dense_oracle(n, d, seed):
    z0, p = instance(n, d, seed)
    fast = linear_attention(z0, p).z
    dense = dense_attention_oracle(z0, p)
    assert torch.max(torch.abs(fast - dense.z)).item() < 1e-10
    assert torch.max(torch.abs(dense.coefficients.sum(dim=1) - 1)).item() < 1e-9


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), d=st.integers(1, 8), seed=st.integers(0, 2**31), beta=st.floats(0.05, 1.0))
def test_factored_dense_property(n, d, seed, beta):
    z0, p = instance(n, d, seed, beta)
    try:
        fast = linear_attention(z0, p).z
    except DegeneracyError:
        # both routes must agree that the normalizer vanished
        with pytest.raises(DegeneracyError):
            dense_attention_oracle(z0, p)
        return
    dense = dense_attention_oracle(z0, p)
    assert torch.max(torch.abs(fast - dense.z)).item() < 1e-10
    assert torch.max(torch.abs(dense.coefficients.sum(dim=1) - 1)).item() < 1e-9


def test_hand_computed_coefficients():
    # z0 = I, W_k = I, W_q chosen so the normalized scores equal W_q itself
    w_q = t([[0.1, 0.2], [0.3, 0.6]])
    p = AttentionParams(w_q, torch.eye(2, dtype=torch.float64), torch.eye(2, dtype=torch.float64))
    c = attention_coefficients(torch.eye(2, dtype=torch.float64), p)
    expected = [[2.1 / 2.3, 0.2 / 2.3], [0.3 / 2.9, 2.6 / 2.9]]
    np.testing.assert_allclose(c.numpy(), expected, rtol=0, atol=1e-15)


def test_zero_input_is_safe():
    z0 = torch.zeros(5, 3, dtype=torch.float64)
    _, p = instance(5, 3, 0)
    out = linear_attention(z0, p).z
    assert torch.equal(out, torch.zeros_like(out))


def test_degenerate_normalizer_raises():
    p = AttentionParams(t([[1.0]]), t([[-1.0]]), t([[1.0]]))
    with pytest.raises(DegeneracyError):
        linear_attention(t([[1.0]]), p)
    with pytest.raises(DegeneracyError):
        attention_coefficients(t([[1.0]]), p)


def test_input_validation():
    _, p = instance(4, 3, 0)
    with pytest.raises(ShapeError):
        linear_attention(torch.zeros(4, 2, dtype=torch.float64), p)
    with pytest.raises(ShapeError):
        AttentionParams(torch.zeros(2, 2), torch.zeros(2, 3), torch.zeros(2, 2))
    with pytest.raises(ConfigError):
        AttentionParams.init(3, Rng(0), beta=0.0)


def test_softmax_hand_example():
    z0 = t([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    eye = torch.eye(2, dtype=torch.float64)
    p = AttentionParams(eye, eye, eye, beta=1.0)
    out = softmax_attention(z0, p)
    scores = [[sum(a * b for a, b in zip(zu, zv)) / math.sqrt(2) for zv in z0.tolist()] for zu in z0.tolist()]
    rows = []
    for s in scores:
        e = [math.exp(x) for x in s]
        rows.append([x / sum(e) for x in e])
    np.testing.assert_allclose(out.coefficients.numpy(), rows, atol=1e-15)
    np.testing.assert_allclose(out.z.numpy(), np.array(rows) @ z0.numpy(), atol=1e-15)


def test_dense_paths_respect_guard():
    z0, p = instance(50, 3, 0)
    with pytest.raises(SizeError):
        softmax_attention(z0, p, guard=49)
    with pytest.raises(SizeError):
        attention_coefficients(z0, p, guard=49)


def test_multilayer_equals_composition():
    rng = Rng(9)
    z0 = torch.randn(40, 6, generator=rng.torch, dtype=torch.float64)
    layers = [AttentionParams.init(6, rng.child(i), beta=0.3 + 0.2 * i) for i in range(3)]
    z = z0
    for p in layers:
        z = linear_attention(z, p).z
    assert torch.max(torch.abs(multilayer_attention(z0, layers) - z)).item() < 1e-9
    z = z0
    for p in layers:
        z = dense_attention_oracle(z, p).z
    assert torch.max(torch.abs(multilayer_attention(z0, layers, kind="dense") - z)).item() < 1e-9


def test_without_self_loop_runs_at_beta_one():
    z0, p = instance(20, 4, 1, beta=0.4)
    no_loop = multilayer_attention(z0, [p], mode=WITHOUT_SELF_LOOP)
    assert torch.equal(no_loop, linear_attention(z0, p, beta=1.0).z)
    assert not torch.allclose(no_loop, multilayer_attention(z0, [p], mode=WITH_SELF_LOOP))
    with pytest.raises(ConfigError):
        multilayer_attention(z0, [p], mode="sideways")
    with pytest.raises(ConfigError):
        multilayer_attention(z0, [])


def test_permutation_equivariance():
    z0, p = instance(30, 5, 2)
    perm = torch.randperm(30, generator=torch.Generator().manual_seed(0))
    out = linear_attention(z0, p).z
    np.testing.assert_allclose(linear_attention(z0[perm], p).z.numpy(), out[perm].numpy(), atol=1e-13)


def test_linear_attention_never_builds_n_by_n():
    n, d = 3000, 8
    z0, p = instance(n, d, 0)
    for w in p.parameters():
        w.requires_grad_(True)
    with AllocationCensus() as census:
        out = linear_attention(z0, p).z
        out.sum().backward()
    assert census.max_numel <= n * d
    with AllocationCensus() as dense:
        softmax_attention(z0[:500], p)
    assert dense.max_numel >= 500 * 500


def test_export_attention_format(tmp_path):
    z0, p = instance(6, 3, 0)
    c = attention_coefficients(z0, p)
    path = export_attention(c, tmp_path / "att.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "6" and len(lines) == 7
    back = np.loadtxt(lines[1:], delimiter=",")
    np.testing.assert_array_equal(back, c.numpy())
