"""Pairwise ranking training loop with adaptive moment optimization.

Each observed interaction is a positive; negatives are uniform cells
rejected against the observed set. The loss sums -log sigmoid(s_pos - s_neg)
over pairs. Propagation is recomputed from the current parameters for every
batch, so gradients flow through the full pipeline.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .model import Model, ModelConfig
from .seeding import derive_seed
from .tensors import DatasetSplit, SparseTensor, TensorShape

__all__ = [
    "LR_GRID",
    "WD_GRID",
    "TrainConfig",
    "PairBatch",
    "AdamState",
    "EpochRecord",
    "TrainResult",
    "NonFiniteLossError",
    "NonFiniteGradientError",
    "sample_negatives",
    "bpr_loss",
    "adam_step",
    "train",
    "format_epoch_line",
]

logger = logging.getLogger(__name__)

# Default sweep grids for learning rate and decoupled weight decay.
LR_GRID = (1e-1, 1e-2, 1e-3)
WD_GRID = (0.0, 1e-3, 1e-5)


class NonFiniteLossError(RuntimeError):
    """Training hit a non-finite loss; carries epoch and batch context."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch


class NonFiniteGradientError(RuntimeError):
    """An optimizer step received a non-finite gradient block."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter block {name!r}")
        self.name = name


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    Model geometry fields mirror :class:`hoipred.model.ModelConfig`; the
    validation fields control the per-epoch ranking check used for model
    selection (``valid_every`` 0 disables it).
    """

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    negatives_per_positive: int = 1
    seed: int = 0
    rank: int = 10
    n_layers: int = 2
    fusion: str = "concat"
    predictor: str = "cp"
    feature_transform: bool = False
    nonlinearity: bool = False
    mlp_hidden: tuple[int, ...] = (64, 64)
    conv_channels: int | None = None
    head_hidden: int = 64
    valid_every: int = 0
    valid_k: int = 100
    valid_kind: str = "sampled"
    valid_multiplier: int = 100

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.negatives_per_positive < 1:
            raise ValueError(
                f"negatives_per_positive must be >= 1, got "
                f"{self.negatives_per_positive}"
            )
        if self.valid_every < 0:
            raise ValueError(f"valid_every must be >= 0, got {self.valid_every}")

    def model_config(self, dims: tuple[int, ...]) -> ModelConfig:
        return ModelConfig(
            dims=dims,
            rank=self.rank,
            n_layers=self.n_layers,
            fusion=self.fusion,
            predictor=self.predictor,
            feature_transform=self.feature_transform,
            nonlinearity=self.nonlinearity,
            mlp_hidden=self.mlp_hidden,
            conv_channels=self.conv_channels,
            head_hidden=self.head_hidden,
            seed=self.seed,
        )


@dataclass(eq=False)
class PairBatch:
    """Aligned positive and negative interactions, one pair per row."""

    positives: np.ndarray  # (m, N)
    negatives: np.ndarray  # (m, N)


@dataclass(eq=False)
class AdamState:
    """First and second moment estimates per parameter block."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def sample_negatives(
    positives: np.ndarray,
    observed: SparseTensor,
    shape: TensorShape,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> np.ndarray:
    """Draw one uniform unobserved cell per positive row.

    Cells landing in the observed set are rejected and redrawn, up to
    ``max_retries`` rounds per slot. Deterministic for a fixed generator
    state.
    """
    positives = np.asarray(positives, dtype=np.int64)
    m = positives.shape[0]
    out = np.empty(m, dtype=np.int64)
    pending = np.arange(m)
    total = shape.total_cells
    for _ in range(max_retries):
        if pending.size == 0:
            break
        draw = rng.integers(0, total, size=pending.size, dtype=np.int64)
        bad = observed.contains_linear(draw)
        out[pending[~bad]] = draw[~bad]
        pending = pending[bad]
    if pending.size:
        raise RuntimeError(
            f"negative sampling exhausted {max_retries} retries for "
            f"{pending.size} slot(s); observed set too dense"
        )
    return shape.decode(out)


def bpr_loss(
    pos_scores: np.ndarray, neg_scores: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed pairwise ranking loss and its score gradients.

    loss = sum log(1 + exp(-(s_pos - s_neg))), evaluated through logaddexp
    so values stay finite for any score gap. Gradients are
    d/ds_pos = -sigmoid(-x) and d/ds_neg = +sigmoid(-x) with x the gap.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError(f"score shapes differ: {pos.shape} vs {neg.shape}")
    x = pos - neg
    loss = float(np.logaddexp(0.0, -x).sum())
    # sigmoid(-x) computed in log space to stay exact for large |x|.
    sig_neg = np.exp(-np.logaddexp(0.0, x))
    return loss, -sig_neg, sig_neg


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected adaptive moment update, in place.

    Weight decay is decoupled: parameters shrink by (1 - lr * wd) before the
    moment-based delta is applied.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    valid_ap: float | None
    wall_ms: float


@dataclass(eq=False)
class TrainResult:
    model: Model
    opt_state: "AdamState"
    log: list[EpochRecord]
    best_epoch: int | None
    best_valid_ap: float | None


def format_epoch_line(record: EpochRecord) -> str:
    valid = "-" if record.valid_ap is None else f"{record.valid_ap:.6f}"
    return (
        f"{record.epoch}\t{record.mean_loss:.10g}\t{valid}\t{record.wall_ms:.1f}"
    )


def _validation_ap(model: Model, split: DatasetSplit, cfg: TrainConfig, epoch: int) -> float:
    from .evaluation import EvalProtocol, evaluate  # deferred to avoid a cycle

    protocol = EvalProtocol(
        kind=cfg.valid_kind,
        multiplier=cfg.valid_multiplier,
        ks=(cfg.valid_k,),
    )
    report = evaluate(
        model.scorer(),
        test=split.valid,
        excluded=[split.train],
        protocol=protocol,
        seed=derive_seed(cfg.seed, f"valid/epoch{epoch}"),
    )
    return report.value("ap", cfg.valid_k)


def train(
    split: DatasetSplit,
    adj,
    cfg: TrainConfig,
    start_epoch: int = 0,
    model: Model | None = None,
    opt_state: AdamState | None = None,
    audit_negatives: bool = False,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs of pairwise ranking training.

    The per-epoch shuffle and negative streams are seeded by the global
    epoch index, so a run resumed from a checkpoint at epoch k reproduces
    exactly the batches a straight-through run would have seen. The
    returned model always carries the final-epoch parameters; when
    validation ran, ``best_epoch`` and ``best_valid_ap`` report which
    epoch scored highest without changing what is returned.
    """
    shape = split.shape
    if model is None:
        model = Model(cfg.model_config(shape.dims), adj)
    elif adj is not None and model.adj is None:
        model.attach_graph(adj)
    params = model.params
    state = opt_state or AdamState.for_params(params)
    positives = split.train.entries
    n_pos = len(positives)
    if n_pos == 0:
        raise ValueError("training set is empty")

    log: list[EpochRecord] = []
    best_epoch: int | None = None
    best_ap = -np.inf
    k_neg = cfg.negatives_per_positive

    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng(
            derive_seed(cfg.seed, f"shuffle/epoch{epoch}")
        )
        neg_rng = np.random.default_rng(
            derive_seed(cfg.seed, f"negatives/epoch{epoch}")
        )
        perm = shuffle_rng.permutation(n_pos)
        total_loss = 0.0
        total_pairs = 0
        for batch_index, start in enumerate(range(0, n_pos, cfg.batch_size)):
            batch_pos = positives[perm[start : start + cfg.batch_size]]
            if k_neg > 1:
                batch_pos = np.repeat(batch_pos, k_neg, axis=0)
            batch = PairBatch(
                positives=batch_pos,
                negatives=sample_negatives(batch_pos, split.train, shape, neg_rng),
            )
            if audit_negatives and split.train.contains(batch.negatives).any():
                raise AssertionError("sampled negative collides with training set")
            interactions = np.vstack([batch.positives, batch.negatives])
            scores, cache = model.forward_batch(interactions)
            m = len(batch.positives)
            loss, d_pos, d_neg = bpr_loss(scores[:m], scores[m:])
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, batch_index, loss)
            grads = model.backward_batch(cache, np.concatenate([d_pos, d_neg]))
            adam_step(params, grads, state, cfg.learning_rate, cfg.weight_decay)
            total_loss += loss
            total_pairs += m

        valid_ap: float | None = None
        due = cfg.valid_every > 0 and (epoch + 1 - start_epoch) % cfg.valid_every == 0
        if due and len(split.valid):
            valid_ap = _validation_ap(model, split, cfg, epoch)
            if valid_ap > best_ap:
                best_ap = valid_ap
                best_epoch = epoch
        record = EpochRecord(
            epoch=epoch,
            mean_loss=total_loss / total_pairs,
            valid_ap=valid_ap,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        log.append(record)
        logger.debug("%s", format_epoch_line(record))

    return TrainResult(
        model=model,
        opt_state=state,
        log=log,
        best_epoch=best_epoch,
        best_valid_ap=None if best_epoch is None else best_ap,
    )
