"""Reusable synthetic-experiment drivers shared by scripts and tests.

The planted protocol generates a tensor whose observed cells follow a
low-rank multilinear structure, splits it, trains a model on the train part,
and scores the test part by average precision under full candidate
enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .evaluation import EvalProtocol, evaluate
from .graph import build_incidence, clique_expand, normalize_adjacency
from .seeding import derive_seed
from .tensors import DatasetSplit, TensorShape, split, synth_planted
from .training import TrainConfig, train

__all__ = [
    "PlantedProtocol",
    "planted_split",
    "train_and_score",
    "propagation_lift",
    "fusion_ablation",
]


@dataclass(frozen=True)
class PlantedProtocol:
    dims: tuple[int, ...] = (20, 20, 20)
    rank: int = 3
    n_obs: int = 400
    noise_frac: float = 0.0
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    eval_ks: tuple[int, ...] = (100,)


def planted_split(protocol: PlantedProtocol, seed: int) -> DatasetSplit:
    """Planted data split 7:1:2 (or per protocol) under one root seed."""
    shape = TensorShape(protocol.dims)
    observed, _ = synth_planted(
        shape,
        protocol.rank,
        protocol.n_obs,
        protocol.noise_frac,
        derive_seed(seed, "synth"),
    )
    return split(observed, protocol.ratios, derive_seed(seed, "split"))


def train_and_score(
    ds: DatasetSplit,
    cfg: TrainConfig,
    eval_ks: tuple[int, ...],
    eval_seed: int = 0,
) -> dict[int, float]:
    """Train on the split and return test AP at each cutoff (full candidates)."""
    graph = clique_expand(build_incidence(ds.train), ds.shape)
    adj = normalize_adjacency(graph)
    result = train(ds, adj, cfg)
    report = evaluate(
        result.model.scorer(),
        test=ds.test,
        excluded=[ds.train, ds.valid],
        protocol=EvalProtocol(kind="full", ks=eval_ks),
        seed=eval_seed,
    )
    return {k: report.value("ap", k) for k in eval_ks}


def propagation_lift(
    protocol: PlantedProtocol,
    seeds: tuple[int, ...],
    base_cfg: TrainConfig,
) -> dict[str, list[float]]:
    """Test AP with and without propagation, same budget and seeds.

    Returns per-seed AP lists under keys "propagated" (the configured layer
    count) and "flat" (zero layers).
    """
    out: dict[str, list[float]] = {"propagated": [], "flat": []}
    k = protocol.eval_ks[0]
    for seed in seeds:
        ds = planted_split(protocol, seed)
        for key, layers in (("propagated", base_cfg.n_layers), ("flat", 0)):
            cfg = replace(base_cfg, n_layers=layers, seed=derive_seed(seed, "train"))
            ap = train_and_score(ds, cfg, protocol.eval_ks, derive_seed(seed, "eval"))
            out[key].append(ap[k])
    return out


def fusion_ablation(
    protocol: PlantedProtocol,
    seed: int,
    base_cfg: TrainConfig,
) -> dict[str, dict[int, float]]:
    """Test AP for each fusion operator at the configured layer count."""
    ds = planted_split(protocol, seed)
    out = {}
    for fusion in ("sum", "mean", "product", "concat"):
        cfg = replace(base_cfg, fusion=fusion, seed=derive_seed(seed, "train"))
        out[fusion] = train_and_score(
            ds, cfg, protocol.eval_ks, derive_seed(seed, "eval")
        )
    return out
