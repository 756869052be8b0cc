"""Allocation accounting for torch kernels.

``AllocationCensus`` intercepts every dispatched op and tallies the bytes of
freshly allocated outputs (views and in-place results are not counted twice).
Totals are deterministic for a fixed computation, unlike OS RSS probes.
"""

from __future__ import annotations

import resource
import sys

import torch
from torch.utils._python_dispatch import TorchDispatchMode


def _stored_numel(t: torch.Tensor) -> int:
    """Entries physically held: numel for dense tensors, nnz for sparse layouts."""
    if t.layout == torch.strided:
        return t.numel()
    return int(t._nnz())


def _tensor_bytes(t: torch.Tensor) -> int:
    if t.layout == torch.strided:
        return t.untyped_storage().nbytes()
    # values plus roughly one int64 index per stored entry per sparse dimension
    return _stored_numel(t) * (t.element_size() + 8 * 2)


def _storage_key(t: torch.Tensor):
    if t.layout != torch.strided:
        return None
    try:
        return t.untyped_storage().data_ptr()
    except RuntimeError:
        return None


def _flatten(obj):
    if isinstance(obj, torch.Tensor):
        yield obj
    elif isinstance(obj, (list, tuple)):
        for o in obj:
            yield from _flatten(o)
    elif isinstance(obj, dict):
        for o in obj.values():
            yield from _flatten(o)


class AllocationCensus(TorchDispatchMode):
    """Count bytes and the largest tensor produced inside the ``with`` block."""

    def __init__(self):
        super().__init__()
        self.total_bytes = 0
        self.max_numel = 0
        self.max_shape: tuple = ()
        self.num_allocations = 0

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        seen = {_storage_key(t) for t in _flatten((args, kwargs))}
        for t in _flatten(out):
            key = _storage_key(t)
            if key is not None and key in seen:
                continue
            seen.add(key)
            self.num_allocations += 1
            self.total_bytes += _tensor_bytes(t)
            numel = _stored_numel(t)
            if numel > self.max_numel:
                self.max_numel = numel
                self.max_shape = tuple(t.shape)
        return out


def peak_rss_bytes() -> int:
    """Process high-water RSS (informational only)."""
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(rss if sys.platform == "darwin" else rss * 1024)
