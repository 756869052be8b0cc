"""SGFormer: input MLP -> global attention, fused with a GCN branch -> linear head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attention import WITH_SELF_LOOP, WITHOUT_SELF_LOOP, AttentionParams, multilayer_attention
from .errors import ConfigError, FormatError, ShapeError
from .gnn import GCNParams, gcn_forward
from .graph import MULTI_LABEL, SINGLE_LABEL, SparseGraph
from .tensor import DTYPES, Rng, check_rate, dropout, glorot, relu

CHECKPOINT_FORMAT = "sgformer-checkpoint/1"


@dataclass
class SGFormerParams:
    w_in: torch.Tensor
    b_in: torch.Tensor
    attention: list[AttentionParams]
    gcn: GCNParams
    w_out: torch.Tensor
    b_out: torch.Tensor
    alpha: float = 0.8
    dropout: float = 0.0
    attention_kind: str = "linear"
    self_loop: bool = True
    task: str = SINGLE_LABEL
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.attention:
            raise ConfigError("at least one attention layer is required")
        if self.attention_kind not in ("linear", "softmax"):
            raise ConfigError(f"unknown attention kind {self.attention_kind!r}")
        check_rate(self.dropout)
        d = self.hidden
        if tuple(self.b_in.shape) != (1, d) or self.w_out.shape[0] != d:
            raise ShapeError("input/output layer widths disagree with the hidden size")
        if any(a.dim != d for a in self.attention) or any(w.shape != (d, d) for w in self.gcn.weights):
            raise ShapeError("attention/GCN widths disagree with the hidden size")

    @classmethod
    def init(cls, in_dim: int, hidden: int, out_dim: int, rng: Rng, *, dtype=torch.float64,
             alpha: float = 0.8, beta: float = 0.5, dropout: float = 0.0, num_gcn_layers: int = 2,
             num_attn_layers: int = 1, attention_kind: str = "linear", self_loop: bool = True,
             task: str = SINGLE_LABEL) -> "SGFormerParams":
        w_in = glorot(in_dim, hidden, rng, dtype)
        attn = [AttentionParams.init(hidden, rng, dtype, beta) for _ in range(num_attn_layers)]
        gcn = GCNParams.init(hidden, num_gcn_layers, rng, dtype, dropout)
        w_out = glorot(hidden, out_dim, rng, dtype)
        p = cls(w_in, torch.zeros((1, hidden), dtype=dtype), attn, gcn, w_out,
                torch.zeros((1, out_dim), dtype=dtype), alpha=alpha, dropout=dropout,
                attention_kind=attention_kind, self_loop=self_loop, task=task)
        for t in p.parameters():
            t.requires_grad_(True)
        return p

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def dtype(self) -> torch.dtype:
        return self.w_in.dtype

    def parameters(self) -> list[torch.Tensor]:
        out = [self.w_in, self.b_in]
        for a in self.attention:
            out += a.parameters()
        return out + self.gcn.parameters() + [self.w_out, self.b_out]

    def named_parameters(self) -> list[tuple[str, torch.Tensor]]:
        names = ["w_in", "b_in"]
        for i in range(len(self.attention)):
            names += [f"attn{i}.w_q", f"attn{i}.w_k", f"attn{i}.w_v"]
        names += [f"gcn{i}.w" for i in range(self.gcn.num_layers)] + ["w_out", "b_out"]
        return list(zip(names, self.parameters()))

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.parameters())

    def hyper(self) -> dict:
        return {
            "in_dim": self.w_in.shape[0], "hidden": self.hidden, "out_dim": self.w_out.shape[1],
            "alpha": self.alpha, "beta": self.attention[0].beta, "dropout": self.dropout,
            "num_gcn_layers": self.gcn.num_layers, "num_attn_layers": len(self.attention),
            "attention_kind": self.attention_kind, "self_loop": self.self_loop, "task": self.task,
            "precision": next(k for k, v in DTYPES.items() if v == self.dtype),
        }


def attention_branch(z0: torch.Tensor, p: SGFormerParams) -> torch.Tensor:
    mode = WITH_SELF_LOOP if p.self_loop else WITHOUT_SELF_LOOP
    return multilayer_attention(z0, p.attention, mode=mode, kind=p.attention_kind)


def input_layer(x: torch.Tensor, p: SGFormerParams, rng: Rng | None = None, training: bool = False) -> torch.Tensor:
    if x.dim() != 2 or x.shape[1] != p.w_in.shape[0]:
        raise ShapeError(f"features of shape {tuple(x.shape)} do not match input width {p.w_in.shape[0]}")
    return relu(dropout(x @ p.w_in + p.b_in, p.dropout, rng, training))


def forward(x: torch.Tensor, a_hat: SparseGraph | torch.Tensor, p: SGFormerParams,
            rng: Rng | None = None, training: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (logits, fused embeddings Z_O)."""
    z0 = input_layer(x, p, rng, training)
    z = attention_branch(z0, p)
    g = gcn_forward(z0, a_hat, p.gcn, rng, training)
    z_o = (1.0 - p.alpha) * z + p.alpha * g
    return z_o @ p.w_out + p.b_out, z_o


def predict(logits, task: str = SINGLE_LABEL) -> np.ndarray:
    """Class ids (argmax, lowest index on ties) or per-task sigmoid probabilities."""
    arr = logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else np.asarray(logits)
    if task == MULTI_LABEL:
        return 1.0 / (1.0 + np.exp(-arr))
    return np.argmax(arr, axis=1)


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(p: SGFormerParams, path, extra: dict | None = None) -> Path:
    """JSON with shape headers; floats are written via repr so values round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {
        name: {"shape": list(t.shape), "data": [float(x) for x in t.detach().reshape(-1).tolist()]}
        for name, t in p.named_parameters()
    }
    doc = {"format": CHECKPOINT_FORMAT, "hyper": p.hyper(), "extra": extra or {}, "tensors": tensors}
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def load_checkpoint(path) -> SGFormerParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not an sgformer checkpoint")
    h = doc["hyper"]
    dtype = DTYPES[h["precision"]]

    def tensor(name):
        spec = doc["tensors"][name]
        t = torch.tensor(spec["data"], dtype=torch.float64).to(dtype).reshape(spec["shape"])
        return t.requires_grad_(True)

    attn = [AttentionParams(tensor(f"attn{i}.w_q"), tensor(f"attn{i}.w_k"), tensor(f"attn{i}.w_v"), h["beta"])
            for i in range(h["num_attn_layers"])]
    gcn = GCNParams([tensor(f"gcn{i}.w") for i in range(h["num_gcn_layers"])], h["dropout"])
    return SGFormerParams(tensor("w_in"), tensor("b_in"), attn, gcn, tensor("w_out"), tensor("b_out"),
                          alpha=h["alpha"], dropout=h["dropout"], attention_kind=h["attention_kind"],
                          self_loop=h["self_loop"], task=h["task"], extra=doc.get("extra", {}))
