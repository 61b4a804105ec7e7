"""Higher-order interaction prediction on clique-expanded hypergraphs.

Observed cells of a sparse N-way tensor are treated as hyperedges over
the disjoint union of the mode index sets. Clique expansion turns them
into a weighted graph, symmetric normalization and L rounds of feature
propagation smooth per-node embeddings over that graph, a fusion
operator combines the layer outputs, and a multilinear or neural head
scores candidate cells. Training is pairwise ranking against sampled
negatives; evaluation ranks held-out cells among unobserved candidates.
"""

from .evaluation import EvalProtocol, ap_at_k, evaluate, precision_at_k, rank_topk
from .graph import (
    CliqueGraph,
    CsrMatrix,
    NormalizedAdjacency,
    build_incidence,
    clique_expand,
    graph_stats,
    normalize_adjacency,
)
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .predictors import make_predictor
from .propagation import FUSION_KINDS, FusionOperator, VariantFlags, fuse, propagate
from .seeding import derive_seed
from .tensors import (
    CooFormatError,
    DatasetSplit,
    SparseTensor,
    TensorShape,
    load_coo,
    merge,
    save_coo,
    split,
    synth_planted,
)
from .training import TrainConfig, TrainResult, bpr_loss, sample_negatives, train

__all__ = [
    "EvalProtocol",
    "ap_at_k",
    "evaluate",
    "precision_at_k",
    "rank_topk",
    "CliqueGraph",
    "CsrMatrix",
    "NormalizedAdjacency",
    "build_incidence",
    "clique_expand",
    "graph_stats",
    "normalize_adjacency",
    "Model",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "make_predictor",
    "FUSION_KINDS",
    "FusionOperator",
    "VariantFlags",
    "fuse",
    "propagate",
    "derive_seed",
    "CooFormatError",
    "DatasetSplit",
    "SparseTensor",
    "TensorShape",
    "load_coo",
    "merge",
    "save_coo",
    "split",
    "synth_planted",
    "TrainConfig",
    "TrainResult",
    "bpr_loss",
    "sample_negatives",
    "train",
]

__version__ = "0.1.0"
