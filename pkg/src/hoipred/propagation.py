"""Layered propagation of entity embeddings over the normalized adjacency.

Layer 0 is the learnable embedding table. Each further layer multiplies the
previous one by the normalized adjacency, optionally applies a per-layer
square feature transform and a rectifier. The per-layer outputs are fused
into one feature matrix (or kept stacked for slab-consuming predictors), and
per-interaction inputs are gathered by global node id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import NormalizedAdjacency
from .tensors import TensorShape

__all__ = [
    "EmbeddingTable",
    "VariantFlags",
    "FactorStack",
    "FusionOperator",
    "FUSION_KINDS",
    "init_embeddings",
    "init_transforms",
    "propagate",
    "propagate_backward",
    "fuse",
    "fuse_backward",
    "stacked_view",
    "interaction_node_ids",
    "gather_rows",
    "scatter_rows",
    "gather_stacked",
    "scatter_stacked",
]

FUSION_KINDS = ("sum", "mean", "product", "concat")


@dataclass(eq=False)
class EmbeddingTable:
    """Dense per-node feature matrix plus the dimension offsets it indexes by."""

    matrix: np.ndarray  # (n_nodes, rank) float64
    offsets: tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def rank(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class VariantFlags:
    """Optional per-layer operations; both default off."""

    feature_transform: bool = False
    nonlinearity: bool = False


@dataclass(eq=False)
class FactorStack:
    """Layer outputs of one propagation pass plus backward caches.

    ``layers[l]`` is the layer-l feature matrix; ``msg_inputs[l]`` and
    ``pre_acts[l]`` cache the adjacency product and pre-activation of the
    transition from layer l to l+1.
    """

    layers: list[np.ndarray]
    flags: VariantFlags
    transforms: list[np.ndarray] | None
    msg_inputs: list[np.ndarray] = field(default_factory=list)
    pre_acts: list[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1

    @property
    def rank(self) -> int:
        return self.layers[0].shape[1]


@dataclass(frozen=True)
class FusionOperator:
    """How the L+1 layer outputs are combined into one feature matrix."""

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in FUSION_KINDS:
            raise ValueError(f"unknown fusion kind {self.kind!r}")

    def layer_scale(self, n_layers: int) -> float:
        return 1.0 / (n_layers + 1) if self.kind == "mean" else 1.0

    def width(self, rank: int, n_layers: int) -> int:
        return (n_layers + 1) * rank if self.kind == "concat" else rank


def _glorot_range(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_embeddings(
    shape: TensorShape,
    rank: int,
    seed: int,
    scheme: str = "glorot-uniform",
) -> EmbeddingTable:
    """Layer-0 embeddings for every entity of every dimension.

    The default scheme draws uniform(-a, a) with a = sqrt(6 / (n_nodes + rank)).
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    n = shape.n_nodes
    rng = np.random.default_rng(seed)
    if scheme == "glorot-uniform":
        a = _glorot_range(n, rank)
        matrix = rng.uniform(-a, a, size=(n, rank))
    elif scheme == "normal":
        matrix = rng.normal(0.0, 0.01, size=(n, rank))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return EmbeddingTable(matrix=matrix, offsets=shape.node_offsets)


def init_transforms(rank: int, n_layers: int, seed: int) -> list[np.ndarray]:
    """Square per-layer feature transforms, same init scheme as embeddings."""
    rng = np.random.default_rng(seed)
    a = _glorot_range(rank, rank)
    return [rng.uniform(-a, a, size=(rank, rank)) for _ in range(n_layers)]


def propagate(
    emb: EmbeddingTable | np.ndarray,
    adj: NormalizedAdjacency,
    n_layers: int,
    flags: VariantFlags = VariantFlags(),
    transforms: list[np.ndarray] | None = None,
) -> FactorStack:
    """Run ``n_layers`` propagation steps and keep every layer output.

    With both flags off each step is a plain multiplication by the
    normalized adjacency. The feature transform multiplies by W[l] on the
    right; the nonlinearity rectifies the result.
    """
    f0 = emb.matrix if isinstance(emb, EmbeddingTable) else np.asarray(emb, float)
    if n_layers < 0:
        raise ValueError(f"n_layers must be >= 0, got {n_layers}")
    if n_layers > 0 and adj.node_count != f0.shape[0]:
        raise ValueError(
            f"adjacency covers {adj.node_count} nodes, embeddings {f0.shape[0]}"
        )
    if flags.feature_transform and n_layers > 0:
        if transforms is None or len(transforms) != n_layers:
            raise ValueError(
                f"feature transform needs {n_layers} matrices, got "
                f"{0 if transforms is None else len(transforms)}"
            )
    stack = FactorStack(layers=[f0], flags=flags, transforms=transforms)
    for l in range(n_layers):
        msg = adj.matmul_dense(stack.layers[-1])
        pre = msg @ transforms[l] if flags.feature_transform else msg
        out = np.maximum(pre, 0.0) if flags.nonlinearity else pre
        stack.msg_inputs.append(msg)
        stack.pre_acts.append(pre)
        stack.layers.append(out)
    return stack


def propagate_backward(
    adj: NormalizedAdjacency,
    layer_grads: list[np.ndarray],
    stack: FactorStack,
) -> tuple[np.ndarray, list[np.ndarray] | None]:
    """Accumulate per-layer output gradients back to layer 0.

    ``layer_grads[l]`` is the loss gradient with respect to ``stack.layers[l]``.
    Returns the gradient with respect to the layer-0 embeddings and, when the
    feature transform is on, the per-layer transform gradients. Transport
    through one step multiplies by the adjacency again, which is valid because
    the normalized adjacency is symmetric.
    """
    n_layers = stack.n_layers
    if len(layer_grads) != n_layers + 1:
        raise ValueError(
            f"need {n_layers + 1} layer gradients, got {len(layer_grads)}"
        )
    flags = stack.flags
    d_transforms = (
        [np.zeros_like(w) for w in stack.transforms]
        if flags.feature_transform
        else None
    )
    g = np.array(layer_grads[n_layers], dtype=float, copy=True)
    for l in range(n_layers, 0, -1):
        if flags.nonlinearity:
            g = g * (stack.pre_acts[l - 1] > 0)
        if flags.feature_transform:
            d_transforms[l - 1] = stack.msg_inputs[l - 1].T @ g
            g = g @ stack.transforms[l - 1].T
        g = adj.matmul_dense(g)
        g = g + layer_grads[l - 1]
    return g, d_transforms


def fuse(stack: FactorStack, op: FusionOperator) -> np.ndarray:
    """Combine all layer outputs into one (n_nodes, width) feature matrix."""
    layers = stack.layers
    if op.kind == "concat":
        return np.concatenate(layers, axis=1)
    if op.kind == "product":
        out = layers[0].copy()
        for f in layers[1:]:
            out *= f
        return out
    out = layers[0].copy()
    for f in layers[1:]:
        out += f
    if op.kind == "mean":
        out *= op.layer_scale(stack.n_layers)
    return out


def fuse_backward(
    stack: FactorStack, op: FusionOperator, d_fused: np.ndarray
) -> list[np.ndarray]:
    """Gradient of the fused matrix with respect to every layer output."""
    n_layers = stack.n_layers
    rank = stack.rank
    if op.kind == "concat":
        return [
            d_fused[:, l * rank : (l + 1) * rank] for l in range(n_layers + 1)
        ]
    if op.kind == "product":
        grads = []
        for l in range(n_layers + 1):
            g = d_fused.copy()
            for m, f in enumerate(stack.layers):
                if m != l:
                    g *= f
            grads.append(g)
        return grads
    scale = op.layer_scale(n_layers)
    shared = d_fused * scale if scale != 1.0 else d_fused
    return [shared] * (n_layers + 1)


def stacked_view(stack: FactorStack) -> np.ndarray:
    """All layer outputs as one (n_nodes, rank, L+1) array; slice l is layer l."""
    return np.stack(stack.layers, axis=2)


def interaction_node_ids(
    interactions: np.ndarray, offsets: tuple[int, ...]
) -> np.ndarray:
    inter = np.asarray(interactions, dtype=np.int64)
    if inter.ndim == 1:
        inter = inter.reshape(1, -1)
    if inter.ndim != 2 or inter.shape[1] != len(offsets):
        raise ValueError(
            f"expected (m, {len(offsets)}) interactions, got {inter.shape}"
        )
    if inter.size and inter.min() < 0:
        raise ValueError("negative interaction index")
    return inter + np.asarray(offsets, dtype=np.int64)


def gather_rows(
    features: np.ndarray,
    interactions: np.ndarray,
    offsets: tuple[int, ...],
) -> np.ndarray:
    """Per-interaction feature rows, one per dimension: (m, N, width) copies."""
    gids = interaction_node_ids(interactions, offsets)
    if gids.size and gids.max() >= features.shape[0]:
        raise IndexError("interaction index out of bounds for feature table")
    return features[gids]


def scatter_rows(
    d_features: np.ndarray,
    interactions: np.ndarray,
    offsets: tuple[int, ...],
    d_rows: np.ndarray,
) -> None:
    """Accumulate gathered-row gradients back into a (n_nodes, width) array."""
    gids = interaction_node_ids(interactions, offsets)
    np.add.at(d_features, gids.ravel(), d_rows.reshape(-1, d_features.shape[1]))


def gather_stacked(
    layers: list[np.ndarray],
    interactions: np.ndarray,
    offsets: tuple[int, ...],
) -> np.ndarray:
    """Per-interaction slab of every layer's rows: (m, (L+1)*N, rank).

    Rows are ordered entity-major, layer-minor: the block for dimension n
    holds that entity's layer 0..L rows contiguously.
    """
    gids = interaction_node_ids(interactions, offsets)
    if gids.size and gids.max() >= layers[0].shape[0]:
        raise IndexError("interaction index out of bounds for feature table")
    m, n_dims = gids.shape
    depth = len(layers)
    slab = np.empty((m, depth * n_dims, layers[0].shape[1]))
    for n in range(n_dims):
        for l, f in enumerate(layers):
            slab[:, n * depth + l, :] = f[gids[:, n]]
    return slab


def scatter_stacked(
    d_layers: list[np.ndarray],
    interactions: np.ndarray,
    offsets: tuple[int, ...],
    d_slab: np.ndarray,
) -> None:
    """Accumulate slab gradients back into per-layer gradient arrays."""
    gids = interaction_node_ids(interactions, offsets)
    depth = len(d_layers)
    for n in range(gids.shape[1]):
        for l in range(depth):
            np.add.at(d_layers[l], gids[:, n], d_slab[:, n * depth + l, :])
