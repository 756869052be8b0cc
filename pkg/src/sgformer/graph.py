"""Graphs, node datasets, file formats, splits and synthetic generators."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .errors import ConfigError, FormatError
from .tensor import Rng

log = logging.getLogger(__name__)

SINGLE_LABEL = "single-label"
MULTI_LABEL = "multi-label"


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """CSR adjacency over ``num_nodes`` nodes.

    Columns are sorted within each row and unique. ``edge_val`` is ``None`` for
    an unweighted (0/1) adjacency.
    """

    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    edge_val: np.ndarray | None = None

    @classmethod
    def from_edges(cls, num_nodes: int, src, dst, *, symmetrize: bool = True,
                   drop_self_loops: bool = True) -> "SparseGraph":
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise FormatError("edge endpoint arrays differ in length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise FormatError(f"edge endpoint outside [0, {num_nodes})")
        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        if drop_self_loops:
            keep = src != dst
            src, dst = src[keep], dst[keep]
        # dedup through the linear key row*N + col, which also sorts by (row, col)
        keys = np.unique(src * num_nodes + dst)
        rows, cols = keys // num_nodes, keys % num_nodes
        row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=row_ptr[1:])
        return cls(num_nodes, row_ptr, cols.astype(np.int64))

    @classmethod
    def from_dense(cls, dense) -> "SparseGraph":
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        rows, cols = np.nonzero(dense)
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
        vals = dense[rows, cols]
        weighted = not np.all(vals == 1.0)
        return cls(n, row_ptr, cols.astype(np.int64), vals if weighted else None)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def row_idx(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.row_ptr))

    @property
    def values(self) -> np.ndarray:
        return self.edge_val if self.edge_val is not None else np.ones(self.nnz)

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def num_undirected_edges(self) -> int:
        """Unordered pairs {u, v}; a self-loop counts once."""
        rows = self.row_idx
        return int(np.count_nonzero(rows < self.col_idx) + np.count_nonzero(rows == self.col_idx))

    def edge_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        rows = self.row_idx
        keep = rows < self.col_idx
        return rows[keep], self.col_idx[keep]

    def is_symmetric(self, atol: float = 1e-15) -> bool:
        rows, cols = self.row_idx, self.col_idx
        keys = rows * self.num_nodes + cols
        t_keys = cols * self.num_nodes + rows
        order = np.argsort(t_keys, kind="stable")
        if not np.array_equal(keys, t_keys[order]):
            return False
        if self.edge_val is None:
            return True
        return bool(np.allclose(self.edge_val, self.edge_val[order], rtol=0, atol=atol))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_nodes, self.num_nodes))
        out[self.row_idx, self.col_idx] = self.values
        return out

    def to_torch(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return torch.sparse_csr_tensor(
                torch.from_numpy(self.row_ptr), torch.from_numpy(self.col_idx),
                torch.as_tensor(self.values, dtype=dtype),
                size=(self.num_nodes, self.num_nodes), check_invariants=False)

    def induced_subgraph(self, nodes: np.ndarray) -> "SparseGraph":
        """Subgraph on ``nodes`` (in the given order), re-indexed 0..len(nodes)-1."""
        nodes = np.asarray(nodes, dtype=np.int64)
        new_id = np.full(self.num_nodes, -1, dtype=np.int64)
        new_id[nodes] = np.arange(nodes.size)
        starts, ends = self.row_ptr[nodes], self.row_ptr[nodes + 1]
        lengths = ends - starts
        # gather the CSR slices of the selected rows without a Python loop
        offsets = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
        pos = np.arange(lengths.sum()) + offsets
        rows = np.repeat(np.arange(nodes.size), lengths)
        cols = new_id[self.col_idx[pos]]
        keep = cols >= 0
        rows, cols, pos = rows[keep], cols[keep], pos[keep]
        order = np.lexsort((cols, rows))
        rows, cols, pos = rows[order], cols[order], pos[order]
        row_ptr = np.zeros(nodes.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=nodes.size), out=row_ptr[1:])
        vals = None if self.edge_val is None else self.edge_val[pos]
        return SparseGraph(int(nodes.size), row_ptr, cols, vals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))


class Masks(NamedTuple):
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


def _empty_mask(n: int) -> np.ndarray:
    return np.zeros(n, dtype=bool)


@dataclass(frozen=True, eq=False)
class NodeDataset:
    """A graph with node features, labels and train/valid/test masks.

    Single-label ``labels`` are an int vector where -1 marks an unlabeled node;
    multi-label ``labels`` are an N x T 0/1 matrix.
    """

    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray = None
    valid_mask: np.ndarray = None
    test_mask: np.ndarray = None
    num_classes: int = 0
    task: str = SINGLE_LABEL
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.num_nodes
        for attr in ("train_mask", "valid_mask", "test_mask"):
            if getattr(self, attr) is None:
                object.__setattr__(self, attr, _empty_mask(n))
        if not self.num_classes:
            k = self.labels.shape[1] if self.task == MULTI_LABEL else int(self.labels.max(initial=-1)) + 1
            object.__setattr__(self, "num_classes", k)
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def masks(self) -> Masks:
        return Masks(self.train_mask, self.valid_mask, self.test_mask)

    def labeled(self) -> np.ndarray:
        if self.task == MULTI_LABEL:
            return np.ones(self.num_nodes, dtype=bool)
        return self.labels >= 0

    def validate(self) -> None:
        n = self.num_nodes
        if self.task not in (SINGLE_LABEL, MULTI_LABEL):
            raise FormatError(f"unknown task kind {self.task!r}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise FormatError(f"features shape {self.features.shape} does not match {n} nodes")
        if self.labels.shape[0] != n:
            raise FormatError(f"labels length {self.labels.shape[0]} does not match {n} nodes")
        if self.task == SINGLE_LABEL and self.labels.size and self.labels.max() >= self.num_classes:
            raise FormatError(f"label {int(self.labels.max())} >= num_classes {self.num_classes}")
        train, valid, test = self.masks
        for m in (train, valid, test):
            if m.shape != (n,) or m.dtype != bool:
                raise FormatError("masks must be boolean vectors of length N")
        if np.any(train & valid) or np.any(train & test) or np.any(valid & test):
            raise ConfigError("train/valid/test masks overlap")
        if np.any((train | valid | test) & ~self.labeled()):
            raise ConfigError("a mask references an unlabeled node")

    def with_masks(self, masks: Masks) -> "NodeDataset":
        return replace(self, train_mask=masks.train, valid_mask=masks.valid, test_mask=masks.test)

    def same_content(self, other: "NodeDataset") -> bool:
        return (self.graph == other.graph
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))
                and self.task == other.task and self.num_classes == other.num_classes)


# --------------------------------------------------------------------- loaders

def load_planetoid_raw(content_path, cites_path, name: str | None = None) -> NodeDataset:
    """Read ``<name>.content`` / ``<name>.cites`` citation files.

    Content lines are ``<id> <feat...> <label>``; cites lines are
    ``<cited> <citing>``. Nodes keep file order, labels are numbered by first
    appearance, edges are symmetrized with self-loops and duplicates dropped.
    Cites lines naming unknown ids are skipped and counted.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids: dict[str, int] = {}
    rows: list[list[float]] = []
    label_names: dict[str, int] = {}
    labels: list[int] = []
    width = None
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise FormatError(f"{content_path}:{lineno}: expected '<id> <features...> <label>'")
            feats = parts[1:-1]
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise FormatError(f"{content_path}:{lineno}: {len(feats)} features, expected {width}")
            if parts[0] in ids:
                raise FormatError(f"{content_path}:{lineno}: duplicate node id {parts[0]!r}")
            ids[parts[0]] = len(ids)
            try:
                rows.append([float(x) for x in feats])
            except ValueError as exc:
                raise FormatError(f"{content_path}:{lineno}: {exc}") from None
            labels.append(label_names.setdefault(parts[-1], len(label_names)))
    if not ids:
        raise FormatError(f"{content_path}: no nodes")

    src, dst = [], []
    skipped = 0
    raw_lines = 0
    with open(cites_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{cites_path}:{lineno}: expected '<cited> <citing>'")
            raw_lines += 1
            a, b = ids.get(parts[0]), ids.get(parts[1])
            if a is None or b is None:
                skipped += 1
                continue
            src.append(a)
            dst.append(b)
    if raw_lines == 0:
        raise FormatError(f"{cites_path}: no edges")
    if skipped:
        log.warning("%s: skipped %d cite lines referencing unknown node ids", cites_path, skipped)

    n = len(ids)
    graph = SparseGraph.from_edges(n, src, dst)
    meta = {
        "raw_cite_lines": raw_lines,
        "skipped_cite_lines": skipped,
        "num_undirected_edges": graph.num_undirected_edges(),
        "class_names": list(label_names),
    }
    return NodeDataset(graph, np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64),
                       num_classes=len(label_names), name=name or content_path.stem, meta=meta)


def load_planetoid_dir(root, name: str) -> NodeDataset:
    root = Path(root)
    for base in (root / name, root):
        content, cites = base / f"{name}.content", base / f"{name}.cites"
        if content.exists() and cites.exists():
            return load_planetoid_raw(content, cites, name=name)
    raise FormatError(f"no {name}.content/{name}.cites under {root}")


def _read_csv_matrix(path: Path, dtype) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([dtype(x) for x in line.replace(",", " ").split()])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(f"{path}:{lineno}: {len(rows[-1])} columns, expected {len(rows[0])}")
    return np.asarray(rows, dtype=np.float64 if dtype is float else np.int64)


def load_generic(directory) -> NodeDataset:
    """Read a directory holding ``meta.json``, ``edges.txt``, ``features.csv``,
    ``labels.csv`` and optional ``split_{train,valid,test}.txt``."""
    d = Path(directory)
    for req in ("meta.json", "edges.txt", "features.csv", "labels.csv"):
        if not (d / req).exists():
            raise FormatError(f"{d / req}: missing file")
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        n, dim, k, task = int(meta["num_nodes"]), int(meta["feat_dim"]), int(meta["num_classes"]), meta["task"]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{d / 'meta.json'}: {exc}") from None
    if task not in (SINGLE_LABEL, MULTI_LABEL):
        raise FormatError(f"{d / 'meta.json'}: task must be {SINGLE_LABEL!r} or {MULTI_LABEL!r}")

    src, dst = [], []
    with open(d / "edges.txt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                a, b = (int(x) for x in parts)
            except ValueError:
                raise FormatError(f"{d / 'edges.txt'}:{lineno}: expected two integer node ids") from None
            if not (0 <= a < n and 0 <= b < n):
                raise FormatError(f"{d / 'edges.txt'}:{lineno}: node id out of range [0, {n})")
            src.append(a)
            dst.append(b)

    feats = _read_csv_matrix(d / "features.csv", float)
    if feats.shape != (n, dim):
        raise FormatError(f"{d / 'features.csv'}: shape {feats.shape}, expected ({n}, {dim})")
    labels = _read_csv_matrix(d / "labels.csv", int)
    if labels.shape[0] != n:
        raise FormatError(f"{d / 'labels.csv'}: {labels.shape[0]} rows, expected {n}")
    if task == SINGLE_LABEL:
        if labels.shape[1] != 1:
            raise FormatError(f"{d / 'labels.csv'}: single-label file must have one column")
        labels = labels[:, 0]
        if labels.max(initial=-1) >= k or labels.min(initial=0) < -1:
            raise FormatError(f"{d / 'labels.csv'}: label outside [-1, {k})")
    elif labels.shape[1] != k or not np.isin(labels, (0, 1)).all():
        raise FormatError(f"{d / 'labels.csv'}: multi-label file must be an N x {k} 0/1 matrix")

    masks = []
    for part in ("train", "valid", "test"):
        m = _empty_mask(n)
        path = d / f"split_{part}.txt"
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        idx = int(line)
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: expected a node id") from None
                    if not 0 <= idx < n:
                        raise FormatError(f"{path}:{lineno}: node id out of range [0, {n})")
                    m[idx] = True
        masks.append(m)

    return NodeDataset(SparseGraph.from_edges(n, src, dst), feats, labels, *masks,
                       num_classes=k, task=task, name=meta.get("name", d.name))


def save_generic(ds: NodeDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": ds.num_nodes, "feat_dim": ds.feat_dim, "num_classes": ds.num_classes,
            "task": ds.task, "name": ds.name}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    src, dst = ds.graph.edge_pairs()
    with open(d / "edges.txt", "w", encoding="utf-8") as fh:
        fh.writelines(f"{a} {b}\n" for a, b in zip(src.tolist(), dst.tolist()))
    with open(d / "features.csv", "w", encoding="utf-8") as fh:
        for row in ds.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    labels = ds.labels.reshape(ds.num_nodes, -1)
    with open(d / "labels.csv", "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(",".join(str(int(x)) for x in row) + "\n")
    for part, mask in zip(("train", "valid", "test"), ds.masks):
        if mask.any():
            (d / f"split_{part}.txt").write_text("".join(f"{i}\n" for i in np.flatnonzero(mask)), encoding="utf-8")
        elif (d / f"split_{part}.txt").exists():
            (d / f"split_{part}.txt").unlink()
    return d


# ---------------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    """How to carve train/valid/test masks.

    kind="per-class": ``per_class`` train nodes from every class, then
    ``num_valid`` and ``num_test`` from the rest. kind="ratio": fractions of the
    labeled nodes. kind="explicit": the given node id lists.
    """

    kind: str = "per-class"
    per_class: int = 20
    num_valid: int = 500
    num_test: int = 1000
    ratios: tuple[float, float, float] = (0.5, 0.25, 0.25)
    train: Sequence[int] = ()
    valid: Sequence[int] = ()
    test: Sequence[int] = ()

    @classmethod
    def semi_supervised(cls) -> "SplitSpec":
        return cls("per-class", per_class=20, num_valid=500, num_test=1000)

    @classmethod
    def ratio(cls, train: float, valid: float, test: float) -> "SplitSpec":
        return cls("ratio", ratios=(train, valid, test))


def make_split(ds: NodeDataset, spec: SplitSpec, rng: Rng) -> Masks:
    n = ds.num_nodes
    masks = Masks(_empty_mask(n), _empty_mask(n), _empty_mask(n))
    labeled = np.flatnonzero(ds.labeled())

    if spec.kind == "per-class":
        if ds.task != SINGLE_LABEL:
            raise ConfigError("per-class splits need single-label data")
        chosen = []
        for c in range(ds.num_classes):
            members = np.flatnonzero(ds.labels == c)
            if members.size < spec.per_class:
                raise ConfigError(f"class {c} has {members.size} nodes, fewer than {spec.per_class}")
            chosen.append(rng.np.choice(members, spec.per_class, replace=False))
        train = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
        rest = np.setdiff1d(labeled, train)
        if rest.size < spec.num_valid + spec.num_test:
            raise ConfigError(f"{rest.size} nodes left for {spec.num_valid} valid + {spec.num_test} test")
        rest = rng.np.permutation(rest)
        masks.train[train] = True
        masks.valid[rest[:spec.num_valid]] = True
        masks.test[rest[spec.num_valid:spec.num_valid + spec.num_test]] = True
    elif spec.kind == "ratio":
        r = spec.ratios
        if len(r) != 3 or min(r) < 0 or sum(r) > 1 + 1e-9:
            raise ConfigError(f"ratios {r} must be three non-negative numbers summing to at most 1")
        m = labeled.size
        perm = rng.np.permutation(labeled)
        n_tr, n_va = int(math.floor(r[0] * m + 1e-9)), int(math.floor(r[1] * m + 1e-9))
        n_te = m - n_tr - n_va if abs(sum(r) - 1) <= 1e-9 else int(math.floor(r[2] * m + 1e-9))
        masks.train[perm[:n_tr]] = True
        masks.valid[perm[n_tr:n_tr + n_va]] = True
        masks.test[perm[n_tr + n_va:n_tr + n_va + n_te]] = True
    elif spec.kind == "explicit":
        for mask, ids in zip(masks, (spec.train, spec.valid, spec.test)):
            ids = np.asarray(ids, dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise ConfigError("explicit split id out of range")
            mask[ids] = True
        if np.any(masks.train & masks.valid) or np.any(masks.train & masks.test) or np.any(masks.valid & masks.test):
            raise ConfigError("explicit split lists overlap")
    else:
        raise ConfigError(f"unknown split kind {spec.kind!r}")
    return masks


# ---------------------------------------------------------------- adjacency

def normalize_adjacency(g: SparseGraph, add_self_loops: bool = True) -> SparseGraph:
    """Symmetric normalization D^-1/2 (A [+ I]) D^-1/2.

    With self-loops the degree is that of A + I, so an isolated node ends up
    with a unit diagonal. Without self-loops isolated rows stay empty.
    """
    n = g.num_nodes
    rows, cols, vals = g.row_idx, g.col_idx, g.values
    if add_self_loops:
        off = rows != cols
        rows = np.concatenate([rows[off], np.arange(n)])
        cols = np.concatenate([cols[off], np.arange(n)])
        vals = np.concatenate([vals[off], np.ones(n)])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    deg = np.bincount(rows, weights=vals, minlength=n)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return SparseGraph(n, row_ptr, cols.astype(np.int64), inv_sqrt[rows] * vals * inv_sqrt[cols])


# --------------------------------------------------------------- generators

def _unrank_pairs(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map k in [0, m(m-1)/2) to the pair (i, j), i < j, with k = j(j-1)/2 + i."""
    j = np.floor((1.0 + np.sqrt(1.0 + 8.0 * k.astype(np.float64))) / 2.0).astype(np.int64)
    # float rounding can be off by one either way near perfect squares
    j -= (j * (j - 1) // 2) > k
    j += ((j + 1) * j // 2) <= k
    i = k - j * (j - 1) // 2
    return i, j


def block_sizes(n: int, blocks: int) -> np.ndarray:
    return np.bincount(np.arange(n) * blocks // n, minlength=blocks)


def sbm_expected_edges(n: int, blocks: int, p_in: float, p_out: float) -> tuple[float, float]:
    """Mean and variance of the undirected edge count."""
    sizes = block_sizes(n, blocks).astype(np.float64)
    within = float(np.sum(sizes * (sizes - 1) / 2))
    between = float((sizes.sum() ** 2 - np.sum(sizes ** 2)) / 2)
    mean = within * p_in + between * p_out
    var = within * p_in * (1 - p_in) + between * p_out * (1 - p_out)
    return mean, var


def generate_sbm(n: int, blocks: int, p_in: float, p_out: float, feat_dim: int, rng: Rng,
                 noise: float = 1.0) -> NodeDataset:
    """Stochastic block model with contiguous blocks and Gaussian class-mean features."""
    if n < 1 or blocks < 1 or blocks > n or feat_dim < 1:
        raise ConfigError(f"need 1 <= blocks <= n and feat_dim >= 1 (n={n}, blocks={blocks}, feat_dim={feat_dim})")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    sizes = block_sizes(n, blocks)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    gen = rng.np
    src, dst = [], []
    for a in range(blocks):
        m = int(sizes[a])
        pairs = m * (m - 1) // 2
        count = gen.binomial(pairs, p_in) if pairs else 0
        if count:
            i, j = _unrank_pairs(gen.choice(pairs, count, replace=False))
            src.append(starts[a] + i)
            dst.append(starts[a] + j)
        for b in range(a + 1, blocks):
            pairs = m * int(sizes[b])
            count = gen.binomial(pairs, p_out) if p_out > 0 else 0
            if count:
                k = gen.choice(pairs, count, replace=False)
                src.append(starts[a] + k // sizes[b])
                dst.append(starts[b] + k % sizes[b])
    src = np.concatenate(src) if src else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.empty(0, dtype=np.int64)
    labels = np.repeat(np.arange(blocks), sizes)
    means = gen.standard_normal((blocks, feat_dim))
    feats = means[labels] + noise * gen.standard_normal((n, feat_dim))
    return NodeDataset(SparseGraph.from_edges(n, src, dst), feats, labels.astype(np.int64),
                       num_classes=blocks, name=f"sbm-{n}",
                       meta={"p_in": p_in, "p_out": p_out, "noise": noise})


def subsample_nodes(ds: NodeDataset, n: int, rng: Rng) -> NodeDataset:
    """Induced subgraph on ``n`` nodes drawn uniformly without replacement."""
    if not 1 <= n <= ds.num_nodes:
        raise ConfigError(f"cannot sample {n} of {ds.num_nodes} nodes")
    nodes = np.sort(rng.np.choice(ds.num_nodes, n, replace=False))
    return take_nodes(ds, nodes)


def take_nodes(ds: NodeDataset, nodes: np.ndarray) -> NodeDataset:
    return replace(ds, graph=ds.graph.induced_subgraph(nodes), features=ds.features[nodes],
                   labels=ds.labels[nodes], train_mask=ds.train_mask[nodes],
                   valid_mask=ds.valid_mask[nodes], test_mask=ds.test_mask[nodes],
                   meta={**ds.meta, "parent_nodes": int(ds.num_nodes)})
