"""Linear global attention fused with a shallow GCN for node classification."""

from .attention import AttentionParams, attention_coefficients, linear_attention, softmax_attention
from .errors import SGFormerError
from .graph import NodeDataset, SparseGraph, SplitSpec, generate_sbm, make_split, normalize_adjacency
from .model import SGFormerParams, forward, load_checkpoint, save_checkpoint
from .tensor import Rng
from .training import TrainConfig, TrainReport, grid_search, train, train_full_batch, train_mini_batch

__version__ = "0.1.0"
