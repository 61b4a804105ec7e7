"""Shared oracles for the test suite.

Everything here recomputes results by a route independent of the library
internals: dense matrices instead of CSR, explicit loops instead of
einsum, central differences instead of backward passes.
"""

from __future__ import annotations

import numpy as np

from hoipred.tensors import SparseTensor, TensorShape


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-3) -> float:
    """Worst relative error with a denominator floor for near-zero entries."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    if got.size == 0:
        return 0.0
    return float(np.max(np.abs(got - want) / denom))


def random_sparse_tensor(
    rng: np.random.Generator,
    order: int | None = None,
    max_dim: int = 8,
    max_entries: int = 30,
) -> SparseTensor:
    """A random tensor with distinct cells, order in {2, 3, 4} by default."""
    if order is None:
        order = int(rng.integers(2, 5))
    dims = tuple(int(rng.integers(2, max_dim + 1)) for _ in range(order))
    shape = TensorShape(dims)
    total = shape.total_cells
    n = int(rng.integers(1, min(max_entries, total) + 1))
    lin = rng.choice(total, size=n, replace=False)
    return SparseTensor(shape, shape.decode(np.sort(lin.astype(np.int64))))


def dense_incidence(tensor: SparseTensor) -> np.ndarray:
    """|V| x |E| 0/1 incidence built by direct indexing."""
    shape = tensor.shape
    b = np.zeros((shape.n_nodes, len(tensor)))
    for e, row in enumerate(tensor.entries):
        for n, idx in enumerate(row):
            b[int(idx) + shape.node_offsets[n], e] = 1.0
    return b


def dense_clique(tensor: SparseTensor) -> np.ndarray:
    """Reference adjacency: B @ B.T with the diagonal removed."""
    b = dense_incidence(tensor)
    a = b @ b.T
    np.fill_diagonal(a, 0.0)
    return a


def count_triangles(adjacency: np.ndarray) -> int:
    """Number of node triples with all three pairwise edges present."""
    a = (np.asarray(adjacency) > 0).astype(np.int64)
    np.fill_diagonal(a, 0)
    return int(np.trace(a @ a @ a) // 6)
