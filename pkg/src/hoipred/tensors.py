"""Sparse tensor container, COO text I/O, dataset splitting, planted synthetic data.

An interaction is an index tuple (i_1, ..., i_N), one entity per dimension,
stored 0-based. The tensors here record which cells were observed, not what
value they held: every stored cell has implicit value 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CooFormatError",
    "TensorShape",
    "SparseTensor",
    "DatasetSplit",
    "load_coo",
    "save_coo",
    "merge",
    "split",
    "synth_planted",
]

logger = logging.getLogger(__name__)

# Linear cell ids are encoded in int64; membership operations on shapes whose
# cell count exceeds this would need a wider encoding.
_MAX_LINEAR = 2**63 - 1

# synth_planted scores every cell densely.
_MAX_SYNTH_CELLS = 10**7


class CooFormatError(ValueError):
    """A COO text file violated the expected format."""


@dataclass(frozen=True)
class TensorShape:
    """Extent of each dimension of an N-way tensor, N >= 2."""

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2:
            raise ValueError(f"tensor order must be >= 2, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"dimension sizes must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def total_cells(self) -> int:
        # Python int: exact even when the product overflows 64 bits.
        return math.prod(self.dims)

    @property
    def n_nodes(self) -> int:
        return sum(self.dims)

    @property
    def node_offsets(self) -> tuple[int, ...]:
        """Global node-id offset of each dimension.

        Entity i_n of dimension n gets global node id i_n + offsets[n],
        where offsets[n] is the total size of the preceding dimensions.
        """
        out = []
        acc = 0
        for d in self.dims:
            out.append(acc)
            acc += d
        return tuple(out)

    def _strides(self) -> tuple[int, ...]:
        out = []
        acc = 1
        for d in reversed(self.dims):
            out.append(acc)
            acc *= d
        return tuple(reversed(out))

    def encode(self, entries: np.ndarray) -> np.ndarray:
        """Map index tuples (m, N) to row-major linear cell ids (m,)."""
        if self.total_cells > _MAX_LINEAR:
            raise ValueError(
                f"shape {self.dims} has {self.total_cells} cells; linear cell "
                f"ids only cover shapes up to {_MAX_LINEAR} cells"
            )
        e = np.asarray(entries, dtype=np.int64)
        if e.ndim == 1:
            e = e.reshape(1, -1)
        if e.ndim != 2 or e.shape[1] != self.order:
            raise ValueError(f"expected (m, {self.order}) index array, got {e.shape}")
        lin = np.zeros(e.shape[0], dtype=np.int64)
        for n, stride in enumerate(self._strides()):
            lin += e[:, n] * stride
        return lin

    def decode(self, linear: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`encode`: linear cell ids (m,) to tuples (m, N)."""
        lin = np.asarray(linear, dtype=np.int64)
        out = np.empty((lin.size, self.order), dtype=np.int64)
        rem = lin
        for n, stride in enumerate(self._strides()):
            out[:, n] = rem // stride
            rem = rem % stride
        return out


@dataclass(eq=False)
class SparseTensor:
    """Deduplicated set of observed interactions with an explicit shape."""

    shape: TensorShape
    entries: np.ndarray  # (n, order) int64, unique rows, within bounds

    _linear_sorted: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        e = np.array(self.entries, dtype=np.int64, copy=True)
        if e.size == 0:
            e = e.reshape(0, self.shape.order)
        if e.ndim != 2 or e.shape[1] != self.shape.order:
            raise ValueError(
                f"entries must have shape (n, {self.shape.order}), got {e.shape}"
            )
        if e.size:
            if e.min() < 0:
                raise ValueError("negative interaction index")
            too_big = e.max(axis=0) >= np.asarray(self.shape.dims)
            if too_big.any():
                dim = int(np.nonzero(too_big)[0][0])
                raise ValueError(
                    f"interaction index out of bounds in dimension {dim} "
                    f"(size {self.shape.dims[dim]})"
                )
        lin = self.shape.encode(e) if e.size else np.empty(0, dtype=np.int64)
        if np.unique(lin).size != len(e):
            raise ValueError("duplicate interactions")
        e.flags.writeable = False
        self.entries = e
        self._linear_sorted = np.sort(lin)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def linear_sorted(self) -> np.ndarray:
        """Linear cell ids of all entries, ascending."""
        return self._linear_sorted

    def contains_linear(self, linear: np.ndarray) -> np.ndarray:
        lin = np.asarray(linear, dtype=np.int64)
        ls = self._linear_sorted
        if ls.size == 0:
            return np.zeros(lin.shape, dtype=bool)
        pos = np.searchsorted(ls, lin)
        ok = pos < ls.size
        out = np.zeros(lin.shape, dtype=bool)
        out[ok] = ls[pos[ok]] == lin[ok]
        return out

    def contains(self, entries: np.ndarray) -> np.ndarray:
        """Vectorized membership test for an (m, N) array of index tuples."""
        return self.contains_linear(self.shape.encode(entries))

    def __contains__(self, interaction) -> bool:
        return bool(self.contains(np.asarray(interaction).reshape(1, -1))[0])


@dataclass(eq=False)
class DatasetSplit:
    """Train/validation/test partition of one observed tensor."""

    train: SparseTensor
    valid: SparseTensor
    test: SparseTensor

    def __post_init__(self) -> None:
        if not (self.train.shape == self.valid.shape == self.test.shape):
            raise ValueError("split parts must share one shape")

    @property
    def shape(self) -> TensorShape:
        return self.train.shape


def load_coo(
    path,
    index_base: int = 0,
    declared_shape: TensorShape | None = None,
) -> SparseTensor:
    """Read whitespace/tab-separated index tuples from a text file.

    Lines starting with '#' are comments; an optional header line
    ``# shape I1 ... IN`` declares the shape. ``index_base`` may be 0 or 1;
    1-based files are rebased to 0. Each data line needs at least N integer
    fields; trailing fields (ratings, timestamps, ...) are ignored. Without a
    declared or header shape, N is the field count of the first data line and
    each dimension size is the maximum observed index plus one. Duplicate
    interactions are merged with a logged count.
    """
    if index_base not in (0, 1):
        raise ValueError(f"index_base must be 0 or 1, got {index_base}")
    path = Path(path)
    header_dims: tuple[int, ...] | None = None
    order = declared_shape.order if declared_shape is not None else None
    rows: list[list[int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = line[1:].split()
                if fields[:1] == ["shape"] and header_dims is None and not rows:
                    try:
                        header_dims = tuple(int(f) for f in fields[1:])
                    except ValueError:
                        raise CooFormatError(
                            f"{path}:{lineno}: malformed shape header: {line!r}"
                        ) from None
                    if len(header_dims) < 2:
                        raise CooFormatError(
                            f"{path}:{lineno}: shape header needs >= 2 dimensions"
                        )
                    if order is None:
                        order = len(header_dims)
                continue
            fields = line.split()
            if order is None:
                order = len(fields)
                if order < 2:
                    raise CooFormatError(
                        f"{path}:{lineno}: need >= 2 index fields, got {order}"
                    )
            if len(fields) < order:
                raise CooFormatError(
                    f"{path}:{lineno}: expected at least {order} fields, "
                    f"got {len(fields)}"
                )
            try:
                rows.append([int(f) for f in fields[:order]])
            except ValueError:
                raise CooFormatError(
                    f"{path}:{lineno}: non-integer index field in {line!r}"
                ) from None

    if declared_shape is not None and header_dims is not None:
        if tuple(declared_shape.dims) != header_dims:
            raise CooFormatError(
                f"{path}: declared shape {declared_shape.dims} conflicts with "
                f"header shape {header_dims}"
            )

    if not rows:
        shape = declared_shape or (TensorShape(header_dims) if header_dims else None)
        if shape is None:
            raise CooFormatError(f"{path}: no data lines and no shape declared")
        return SparseTensor(shape, np.empty((0, shape.order), dtype=np.int64))

    entries = np.asarray(rows, dtype=np.int64)
    entries -= index_base
    if entries.min() < 0:
        raise CooFormatError(
            f"{path}: negative index after rebasing from base {index_base}"
        )

    if declared_shape is not None:
        shape = declared_shape
    elif header_dims is not None:
        shape = TensorShape(header_dims)
    else:
        shape = TensorShape(tuple(int(m) + 1 for m in entries.max(axis=0)))

    too_big = entries.max(axis=0) >= np.asarray(shape.dims)
    if too_big.any():
        dim = int(np.nonzero(too_big)[0][0])
        raise CooFormatError(
            f"{path}: index out of bounds in dimension {dim} "
            f"(size {shape.dims[dim]}, saw {int(entries[:, dim].max())})"
        )

    lin = shape.encode(entries)
    _, first = np.unique(lin, return_index=True)
    if first.size < len(entries):
        logger.info(
            "%s: merged %d duplicate interaction(s)", path, len(entries) - first.size
        )
        entries = entries[np.sort(first)]
    return SparseTensor(shape, entries)


def save_coo(tensor: SparseTensor, path) -> None:
    """Write a tensor as a shape header plus 0-based tab-separated lines.

    Lines are emitted in lexicographic index order, so identical tensors
    serialize to identical bytes.
    """
    order = np.lexsort(tensor.entries.T[::-1]) if len(tensor) else np.empty(0, int)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# shape " + " ".join(str(d) for d in tensor.shape.dims) + "\n")
        for row in tensor.entries[order]:
            fh.write("\t".join(str(int(i)) for i in row) + "\n")


def merge(tensors: list[SparseTensor]) -> SparseTensor:
    """Union of the interaction sets of same-shaped tensors."""
    if not tensors:
        raise ValueError("nothing to merge")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ValueError("merge requires identical shapes")
    lin = np.unique(np.concatenate([t.linear_sorted for t in tensors]))
    return SparseTensor(shape, shape.decode(lin))


def split(
    tensor: SparseTensor,
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Partition interactions into train/valid/test by a seeded shuffle.

    Validation and test sizes are floor(|E| * ratio); the remainder goes to
    train. Deterministic for a fixed seed.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0 for x in r):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got sum {sum(r)}")
    n = len(tensor)
    if n == 0:
        raise ValueError("cannot split an empty tensor")
    # Tiny epsilon guards floor() against 69999.999... style float error.
    n_valid = int(math.floor(n * r[1] + 1e-9))
    n_test = int(math.floor(n * r[2] + 1e-9))
    n_train = n - n_valid - n_test
    perm = np.random.default_rng(seed).permutation(n)
    parts = (
        tensor.entries[perm[:n_train]],
        tensor.entries[perm[n_train : n_train + n_valid]],
        tensor.entries[perm[n_train + n_valid :]],
    )
    return DatasetSplit(*(SparseTensor(tensor.shape, p) for p in parts))


def _factor_scores(factors: list[np.ndarray]) -> np.ndarray:
    """Dense rank-R multilinear scores: sum_c of the outer product of columns."""
    letters = "abcdefgh"
    n = len(factors)
    subs = ",".join(f"{letters[m]}z" for m in range(n)) + "->" + letters[:n]
    return np.einsum(subs, *factors)


def synth_planted(
    shape: TensorShape,
    rank: int,
    n_obs: int,
    noise_frac: float,
    seed: int,
) -> tuple[SparseTensor, SparseTensor]:
    """Generate a tensor with planted multilinear structure.

    Draws nonnegative factor matrices, scores every cell by their rank-R
    multilinear product, and takes the top ``n_obs`` cells as the true
    interaction set. The observed tensor mixes (1 - noise_frac) * n_obs
    cells sampled from the true set with noise_frac * n_obs uniform random
    cells; the holdout is the remaining true cells. Returns
    (observed, holdout).
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if not 0.0 <= noise_frac <= 1.0:
        raise ValueError(f"noise_frac must lie in [0, 1], got {noise_frac}")
    total = shape.total_cells
    if not 0 < n_obs < total:
        raise ValueError(f"n_obs must lie in (0, {total}), got {n_obs}")
    if total > _MAX_SYNTH_CELLS:
        raise ValueError(
            f"planted generation scores all cells; {total} exceeds the "
            f"{_MAX_SYNTH_CELLS} cell limit"
        )

    rng = np.random.default_rng(seed)
    factors = [rng.uniform(0.0, 1.0, size=(d, rank)) for d in shape.dims]
    flat = _factor_scores(factors).ravel()
    true_lin = np.argsort(-flat, kind="stable")[:n_obs].astype(np.int64)

    n_noise = int(round(noise_frac * n_obs))
    n_clean = n_obs - n_noise
    observed = set(rng.choice(true_lin, size=n_clean, replace=False).tolist())
    rounds = 0
    while len(observed) < n_obs:
        rounds += 1
        if rounds > 1000:
            raise RuntimeError("noise cell sampling failed to find free cells")
        for cell in rng.integers(0, total, size=n_obs - len(observed)).tolist():
            if cell not in observed and len(observed) < n_obs:
                observed.add(cell)

    obs_lin = np.sort(np.fromiter(observed, dtype=np.int64, count=n_obs))
    hold_lin = np.setdiff1d(true_lin, obs_lin)
    return (
        SparseTensor(shape, shape.decode(obs_lin)),
        SparseTensor(shape, shape.decode(hold_lin)),
    )
