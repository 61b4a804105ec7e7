"""Top-k retrieval over candidate cells and average-precision metrics.

Candidates are the unobserved cells of the tensor: either a lazy, exact
enumeration of every non-excluded cell, or the test interactions plus a
fixed multiple of uniform random unobserved fillers. Ranking keeps a bounded
heap, so full enumeration never materializes the candidate set.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .tensors import SparseTensor, TensorShape

__all__ = [
    "EvalProtocol",
    "CandidateSet",
    "RankedList",
    "EvalReport",
    "build_candidates",
    "rank_topk",
    "precision_at_k",
    "ap_at_k",
    "evaluate",
    "format_metrics_rows",
    "format_ranked_rows",
]


@dataclass(frozen=True)
class EvalProtocol:
    """How candidates are formed and which cutoffs are reported."""

    kind: str = "full"
    multiplier: int = 1000
    ks: tuple[int, ...] = (100,)
    runs: int = 1
    exclude_valid: bool = True
    enumeration_cap: int = 10**9
    block_size: int = 8192

    def __post_init__(self) -> None:
        if self.kind not in ("full", "sampled"):
            raise ValueError(f"candidate kind must be full or sampled, got {self.kind!r}")
        if self.multiplier < 1:
            raise ValueError(f"multiplier must be >= 1, got {self.multiplier}")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError(f"cutoffs must be positive, got {self.ks}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")


@dataclass(eq=False)
class CandidateSet:
    """A reusable stream of candidate interaction blocks."""

    kind: str
    n_candidates: int
    shape: TensorShape
    _excluded_linear: np.ndarray
    _sampled: np.ndarray | None
    _block_size: int

    def blocks(self):
        """Yield (m, N) candidate blocks; restartable."""
        if self._sampled is not None:
            for start in range(0, len(self._sampled), self._block_size):
                yield self._sampled[start : start + self._block_size]
            return
        total = self.shape.total_cells
        excluded = self._excluded_linear
        for start in range(0, total, self._block_size):
            lin = np.arange(start, min(start + self._block_size, total), dtype=np.int64)
            if excluded.size:
                pos = np.searchsorted(excluded, lin)
                pos_ok = pos < excluded.size
                hit = np.zeros(lin.size, dtype=bool)
                hit[pos_ok] = excluded[pos[pos_ok]] == lin[pos_ok]
                lin = lin[~hit]
            if lin.size:
                yield self.shape.decode(lin)


def _union_linear(tensors: list[SparseTensor]) -> np.ndarray:
    parts = [t.linear_sorted for t in tensors if len(t)]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def build_candidates(
    shape: TensorShape,
    excluded: list[SparseTensor],
    test: SparseTensor,
    kind: str = "full",
    multiplier: int = 1000,
    seed: int = 0,
    enumeration_cap: int = 10**9,
    block_size: int = 8192,
) -> CandidateSet:
    """Form the candidate cells a scorer is ranked over.

    full: every cell not in ``excluded``, enumerated lazily in lexicographic
    order. sampled: all test interactions plus ``multiplier * |test|``
    distinct uniform cells drawn outside ``excluded`` and the test set (fewer
    when the tensor has no more free cells).
    """
    excluded_lin = _union_linear(excluded)
    if kind == "full":
        n = shape.total_cells - int(excluded_lin.size)
        if n > enumeration_cap:
            raise ValueError(
                f"full enumeration would score {n} cells, above the cap of "
                f"{enumeration_cap}; use the sampled candidate protocol"
            )
        return CandidateSet(
            kind="full",
            n_candidates=n,
            shape=shape,
            _excluded_linear=excluded_lin,
            _sampled=None,
            _block_size=block_size,
        )
    if kind != "sampled":
        raise ValueError(f"candidate kind must be full or sampled, got {kind!r}")
    if len(test) == 0:
        raise ValueError("sampled candidates need a nonempty test set")
    rng = np.random.default_rng(seed)
    forbidden = np.union1d(excluded_lin, test.linear_sorted)
    total = shape.total_cells
    available = total - int(forbidden.size)
    target = multiplier * len(test)
    n_fill = min(target, available)
    if n_fill < available // 2 or total > 10**7:
        fillers = _reject_sample(rng, total, forbidden, n_fill)
    else:
        # Near saturation rejection stalls; enumerate the free cells instead.
        pool = np.setdiff1d(np.arange(total, dtype=np.int64), forbidden)
        fillers = np.sort(rng.choice(pool, size=n_fill, replace=False))
    sampled = np.vstack([test.entries, shape.decode(fillers)])
    return CandidateSet(
        kind="sampled",
        n_candidates=len(sampled),
        shape=shape,
        _excluded_linear=excluded_lin,
        _sampled=sampled,
        _block_size=block_size,
    )


def _reject_sample(
    rng: np.random.Generator, total: int, forbidden: np.ndarray, n: int
) -> np.ndarray:
    """Distinct uniform draws from [0, total) avoiding a sorted forbidden set."""
    have = np.empty(0, dtype=np.int64)
    for _ in range(200):
        if have.size >= n:
            break
        need = n - have.size
        draw = rng.integers(0, total, size=need + need // 4 + 16, dtype=np.int64)
        if forbidden.size:
            pos = np.searchsorted(forbidden, draw)
            pos_ok = pos < forbidden.size
            hit = np.zeros(draw.size, dtype=bool)
            hit[pos_ok] = forbidden[pos[pos_ok]] == draw[pos_ok]
            draw = draw[~hit]
        have = np.unique(np.concatenate([have, draw]))
    if have.size < n:
        raise RuntimeError(
            f"candidate sampling could not find {n} free cells in 200 rounds"
        )
    return have[:n]


@dataclass(eq=False)
class RankedList:
    """Top-ranked interactions, best first."""

    interactions: np.ndarray  # (k, N) int64
    scores: np.ndarray  # (k,) float64

    def __len__(self) -> int:
        return len(self.scores)


def rank_topk(scorer, candidate_blocks, k: int) -> RankedList:
    """Stream candidate blocks through a bounded heap of the best k.

    Order is by descending score; equal scores break toward the
    lexicographically smaller interaction, matching a full sort of the
    candidate set. Memory stays O(k + block).
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    # Heap entries are (score, negated index tuple, index tuple): the root is
    # the worst kept candidate, where negation makes lexicographically larger
    # interactions compare smaller, i.e. lose ties.
    heap: list[tuple[float, tuple[int, ...], tuple[int, ...]]] = []
    for block in candidate_blocks:
        block = np.asarray(block)
        if block.size == 0:
            continue
        scores = np.asarray(scorer.score(block), dtype=np.float64)
        if len(heap) == k:
            contenders = np.nonzero(scores >= heap[0][0])[0]
        else:
            contenders = range(block.shape[0])
        for i in contenders:
            interaction = tuple(int(x) for x in block[i])
            key = (float(scores[i]), tuple(-x for x in interaction))
            if len(heap) < k:
                heapq.heappush(heap, key + (interaction,))
            elif key > heap[0][:2]:
                heapq.heapreplace(heap, key + (interaction,))
    items = sorted(heap, key=lambda e: (-e[0], e[2]))
    n_dims = len(items[0][2]) if items else 0
    return RankedList(
        interactions=np.array([e[2] for e in items], dtype=np.int64).reshape(
            len(items), n_dims
        ),
        scores=np.array([e[0] for e in items]),
    )


def _hits(ranked: RankedList, test: SparseTensor, k: int) -> np.ndarray:
    top = ranked.interactions[: min(k, len(ranked))]
    if len(top) == 0:
        return np.zeros(0, dtype=bool)
    return test.contains(top)


def precision_at_k(ranked: RankedList, test: SparseTensor, k: int) -> float:
    """Fraction of the cutoff filled with test interactions."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    return float(_hits(ranked, test, k).sum() / k)


def ap_at_k(ranked: RankedList, test: SparseTensor, k: int) -> float:
    """Average precision at cutoff k.

    Sums precision-at-i over the ranks i <= k that hold a test interaction
    and divides by min(k, |test|), so a perfect head of the ranking scores 1.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if len(test) == 0:
        raise ValueError("average precision needs a nonempty test set")
    hits = _hits(ranked, test, k)
    if hits.size == 0:
        return 0.0
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float((precision * hits).sum() / min(k, len(test)))


@dataclass(frozen=True)
class MetricRow:
    metric: str
    k: int
    value: float


@dataclass(eq=False)
class EvalReport:
    rows: list[MetricRow]
    n_test: int
    n_candidates: int
    ranked: RankedList

    def value(self, metric: str, k: int) -> float:
        for row in self.rows:
            if row.metric == metric and row.k == k:
                return row.value
        raise KeyError(f"no {metric}@{k} in report")


def evaluate(
    scorer,
    test: SparseTensor,
    excluded: list[SparseTensor],
    protocol: EvalProtocol,
    seed: int = 0,
) -> EvalReport:
    """Rank candidates once and report AP and precision at every cutoff.

    ``excluded`` lists the tensors whose cells may not appear as candidates
    (typically train and validation). Features are propagated once by the
    scorer; ranking reuses one pass at the largest cutoff.
    """
    if len(test) == 0:
        raise ValueError("evaluation needs a nonempty test set")
    candidates = build_candidates(
        test.shape,
        excluded,
        test,
        kind=protocol.kind,
        multiplier=protocol.multiplier,
        seed=seed,
        enumeration_cap=protocol.enumeration_cap,
        block_size=protocol.block_size,
    )
    ranked = rank_topk(scorer, candidates.blocks(), max(protocol.ks))
    rows = []
    for k in sorted(protocol.ks):
        rows.append(MetricRow("ap", k, ap_at_k(ranked, test, k)))
        rows.append(MetricRow("precision", k, precision_at_k(ranked, test, k)))
    return EvalReport(
        rows=rows,
        n_test=len(test),
        n_candidates=candidates.n_candidates,
        ranked=ranked,
    )


def format_metrics_rows(report: EvalReport) -> list[str]:
    """Machine-readable lines: metric, cutoff, value, test and candidate sizes."""
    return [
        f"{row.metric}\t{row.k}\t{row.value:.10g}\t{report.n_test}\t{report.n_candidates}"
        for row in report.rows
    ]


def format_ranked_rows(ranked: RankedList, test: SparseTensor) -> list[str]:
    """Ranked-list lines: rank, the index tuple, score, test membership."""
    is_test = (
        test.contains(ranked.interactions)
        if len(ranked)
        else np.zeros(0, dtype=bool)
    )
    lines = []
    for pos in range(len(ranked)):
        idx = "\t".join(str(int(x)) for x in ranked.interactions[pos])
        lines.append(
            f"{pos + 1}\t{idx}\t{ranked.scores[pos]:.10g}\t{int(is_test[pos])}"
        )
    return lines
