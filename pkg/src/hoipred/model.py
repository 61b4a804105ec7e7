"""End-to-end scoring model and its checkpoint container.

A model owns the layer-0 embedding table, optional per-layer feature
transforms, and a predictor head; given the normalized adjacency it scores
batches of interactions and differentiates the batch loss back to every
parameter block. Parameters live in one flat name-to-array dict so the
optimizer can treat them uniformly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .graph import NormalizedAdjacency
from .predictors import make_predictor
from .propagation import (
    FactorStack,
    FusionOperator,
    VariantFlags,
    fuse,
    fuse_backward,
    gather_rows,
    gather_stacked,
    init_embeddings,
    init_transforms,
    propagate,
    propagate_backward,
    scatter_rows,
    scatter_stacked,
)
from .seeding import derive_seed
from .tensors import TensorShape

__all__ = [
    "ModelConfig",
    "Model",
    "FrozenScorer",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"HOIPCKPT"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    dims: tuple[int, ...]
    rank: int = 10
    n_layers: int = 2
    fusion: str = "concat"
    predictor: str = "cp"
    feature_transform: bool = False
    nonlinearity: bool = False
    mlp_hidden: tuple[int, ...] = (64, 64)
    conv_channels: int | None = None
    head_hidden: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        FusionOperator(self.fusion)
        if self.predictor not in ("cp", "tucker", "mlp", "conv"):
            raise ValueError(f"unknown predictor {self.predictor!r}")

    @property
    def shape(self) -> TensorShape:
        return TensorShape(self.dims)


@dataclass(eq=False)
class _BatchCache:
    interactions: np.ndarray
    stack: FactorStack
    predictor_cache: dict
    fused_width: int


class Model:
    """Embeddings, transforms, and a predictor head wired for one tensor shape."""

    def __init__(self, config: ModelConfig, adj: NormalizedAdjacency | None = None):
        self.config = config
        self.adj = adj
        shape = config.shape
        self.offsets = shape.node_offsets
        self.flags = VariantFlags(
            feature_transform=config.feature_transform,
            nonlinearity=config.nonlinearity,
        )
        self.fusion = FusionOperator(config.fusion)
        self.predictor = make_predictor(
            config.predictor,
            n_dims=shape.order,
            rank=config.rank,
            n_layers=config.n_layers,
            fusion=config.fusion,
            mlp_hidden=config.mlp_hidden,
            conv_channels=config.conv_channels,
            head_hidden=config.head_hidden,
        )
        emb = init_embeddings(
            shape, config.rank, derive_seed(config.seed, "init/embeddings")
        )
        self.params: dict[str, np.ndarray] = {"emb": emb.matrix}
        if config.feature_transform and config.n_layers > 0:
            transforms = init_transforms(
                config.rank,
                config.n_layers,
                derive_seed(config.seed, "init/transforms"),
            )
            for l, w in enumerate(transforms):
                self.params[f"W{l}"] = w
        pred_rng = np.random.default_rng(derive_seed(config.seed, "init/predictor"))
        for name, arr in self.predictor.init_params(pred_rng).items():
            self.params[f"pred.{name}"] = arr

    @property
    def n_nodes(self) -> int:
        return self.params["emb"].shape[0]

    def attach_graph(self, adj: NormalizedAdjacency) -> None:
        if adj.node_count != self.n_nodes:
            raise ValueError(
                f"adjacency covers {adj.node_count} nodes, model has {self.n_nodes}"
            )
        self.adj = adj

    def _transforms(self) -> list[np.ndarray] | None:
        if not self.flags.feature_transform or self.config.n_layers == 0:
            return None
        return [self.params[f"W{l}"] for l in range(self.config.n_layers)]

    def _pred_params(self) -> dict[str, np.ndarray]:
        return {
            name[len("pred.") :]: arr
            for name, arr in self.params.items()
            if name.startswith("pred.")
        }

    def _require_graph(self) -> NormalizedAdjacency:
        if self.adj is None and self.config.n_layers > 0:
            raise ValueError("model needs an attached graph to propagate")
        return self.adj

    def _propagate(self) -> FactorStack:
        return propagate(
            self.params["emb"],
            self._require_graph(),
            self.config.n_layers,
            flags=self.flags,
            transforms=self._transforms(),
        )

    def forward_batch(self, interactions: np.ndarray) -> tuple[np.ndarray, _BatchCache]:
        """Scores for an (m, N) batch, plus the cache its backward pass needs.

        Propagation is recomputed from the current parameters on every call.
        """
        stack = self._propagate()
        if self.predictor.layout == "stacked":
            inputs = gather_stacked(stack.layers, interactions, self.offsets)
            width = stack.rank
        else:
            fused = fuse(stack, self.fusion)
            inputs = gather_rows(fused, interactions, self.offsets)
            width = fused.shape[1]
        scores, pcache = self.predictor.forward(inputs, self._pred_params())
        return scores, _BatchCache(
            interactions=np.asarray(interactions),
            stack=stack,
            predictor_cache=pcache,
            fused_width=width,
        )

    def backward_batch(
        self, cache: _BatchCache, d_scores: np.ndarray
    ) -> dict[str, np.ndarray]:
        """Gradient of sum(d_scores * scores) with respect to every parameter."""
        d_inputs, d_pred = self.predictor.backward(
            d_scores, self._pred_params(), cache.predictor_cache
        )
        grads = {f"pred.{k}": v for k, v in d_pred.items()}
        stack = cache.stack
        if self.predictor.layout == "stacked":
            d_layers = [np.zeros_like(f) for f in stack.layers]
            scatter_stacked(d_layers, cache.interactions, self.offsets, d_inputs)
        else:
            d_fused = np.zeros((self.n_nodes, cache.fused_width))
            scatter_rows(d_fused, cache.interactions, self.offsets, d_inputs)
            d_layers = fuse_backward(stack, self.fusion, d_fused)
        if self.config.n_layers == 0:
            grads["emb"] = np.array(d_layers[0], copy=True)
        else:
            d_emb, d_w = propagate_backward(self.adj, d_layers, stack)
            grads["emb"] = d_emb
            if d_w is not None:
                for l, g in enumerate(d_w):
                    grads[f"W{l}"] = g
        return grads

    def scorer(self) -> "FrozenScorer":
        """Freeze current parameters into a scorer with one propagation pass."""
        return FrozenScorer(self)


class FrozenScorer:
    """Scores interaction blocks against features propagated once."""

    def __init__(self, model: Model):
        self._model = model
        stack = model._propagate()
        self._params = model._pred_params()
        if model.predictor.layout == "stacked":
            self._layers = stack.layers
            self._fused = None
        else:
            self._layers = None
            self._fused = fuse(stack, model.fusion)

    def score(self, interactions: np.ndarray) -> np.ndarray:
        interactions = np.asarray(interactions)
        if interactions.size == 0:
            return np.empty(0)
        model = self._model
        if self._layers is not None:
            inputs = gather_stacked(self._layers, interactions, model.offsets)
        else:
            inputs = gather_rows(self._fused, interactions, model.offsets)
        scores, _ = model.predictor.forward(inputs, self._params)
        return scores


def _config_to_json(config: ModelConfig) -> dict:
    return {
        "dims": list(config.dims),
        "rank": config.rank,
        "n_layers": config.n_layers,
        "fusion": config.fusion,
        "predictor": config.predictor,
        "feature_transform": config.feature_transform,
        "nonlinearity": config.nonlinearity,
        "mlp_hidden": list(config.mlp_hidden),
        "conv_channels": config.conv_channels,
        "head_hidden": config.head_hidden,
        "seed": config.seed,
    }


def _config_from_json(d: dict) -> ModelConfig:
    return ModelConfig(
        dims=tuple(d["dims"]),
        rank=d["rank"],
        n_layers=d["n_layers"],
        fusion=d["fusion"],
        predictor=d["predictor"],
        feature_transform=d["feature_transform"],
        nonlinearity=d["nonlinearity"],
        mlp_hidden=tuple(d["mlp_hidden"]),
        conv_channels=d["conv_channels"],
        head_hidden=d["head_hidden"],
        seed=d["seed"],
    )


def save_checkpoint(path, model: Model, opt_state=None, extra: dict | None = None) -> None:
    """Write a self-contained binary snapshot of model and optimizer state.

    The container is a magic tag, a format version, a JSON header describing
    the configuration and the parameter blocks, then the raw little-endian
    block bytes in header order. Identical state serializes to identical
    bytes.
    """
    blocks: list[tuple[str, np.ndarray]] = sorted(model.params.items())
    adam = None
    if opt_state is not None:
        adam = {
            "step": opt_state.step,
            "beta1": opt_state.beta1,
            "beta2": opt_state.beta2,
            "eps": opt_state.eps,
        }
        blocks += [(f"adam.m.{k}", v) for k, v in sorted(opt_state.m.items())]
        blocks += [(f"adam.v.{k}", v) for k, v in sorted(opt_state.v.items())]
    header = {
        "config": _config_to_json(model.config),
        "blocks": [
            {"name": name, "shape": list(arr.shape), "dtype": "<f8"}
            for name, arr in blocks
        ],
        "adam": adam,
        "extra": extra or {},
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(payload)))
        fh.write(payload)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, adj: NormalizedAdjacency | None = None):
    """Read a checkpoint; returns (model, opt_state or None, extra dict)."""
    from .training import AdamState  # local import to avoid a cycle

    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for spec in header["blocks"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint block {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    config = _config_from_json(header["config"])
    model = Model(config, adj)
    for name in model.params:
        if name not in arrays:
            raise ValueError(f"{path}: checkpoint missing block {name}")
        model.params[name] = arrays[name]
    opt_state = None
    if header["adam"] is not None:
        opt_state = AdamState(
            m={k: arrays[f"adam.m.{k}"] for k in model.params},
            v={k: arrays[f"adam.v.{k}"] for k in model.params},
            step=int(header["adam"]["step"]),
            beta1=float(header["adam"]["beta1"]),
            beta2=float(header["adam"]["beta2"]),
            eps=float(header["adam"]["eps"]),
        )
    return model, opt_state, header["extra"]
