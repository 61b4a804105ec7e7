"""Incidence structure of observed interactions and its clique-expanded graph.

Nodes are the entities of every tensor dimension under a global numbering:
entity i_n of dimension n has node id i_n + offsets[n]. Each observed
interaction connects its N entities pairwise, so it contributes an N-clique;
the expanded graph's edge weight counts how many interactions a node pair
shares. Degree-normalizing the weights yields the operator used for
embedding propagation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .tensors import SparseTensor, TensorShape

__all__ = [
    "CsrMatrix",
    "CliqueGraph",
    "NormalizedAdjacency",
    "GraphStats",
    "build_incidence",
    "clique_expand",
    "normalize_adjacency",
    "graph_stats",
    "write_edge_list",
]


@dataclass(eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with strictly positive values.

    Column indices are strictly increasing within every row. Arrays are
    read-only after construction.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray  # (n_rows + 1,) int64, nondecreasing, ends at nnz
    col_idx: np.ndarray  # (nnz,) int64
    values: np.ndarray  # (nnz,) float64, > 0

    def __post_init__(self) -> None:
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.validate()
        for a in (self.row_ptr, self.col_idx, self.values):
            a.flags.writeable = False

    def validate(self) -> None:
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative matrix dimension")
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have n_rows + 1 entries")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if len(self.col_idx) != len(self.values):
            raise ValueError("col_idx and values length mismatch")
        nnz = len(self.col_idx)
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValueError("column index out of bounds")
            if not np.all(self.values > 0):
                raise ValueError("values must be strictly positive")
        if nnz > 1:
            # Pair (j, j+1) stays within one row unless j+1 starts a new row.
            same_row = np.ones(nnz - 1, dtype=bool)
            starts = self.row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < nnz)]
            same_row[starts - 1] = False
            if not np.all(np.diff(self.col_idx)[same_row] > 0):
                raise ValueError("column indices must strictly increase per row")

    @property
    def nnz(self) -> int:
        return len(self.col_idx)

    @property
    def nbytes(self) -> int:
        """Exact byte footprint of the three index/value arrays."""
        return self.row_ptr.nbytes + self.col_idx.nbytes + self.values.nbytes

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        """Return self @ x for a dense (n_cols, k) matrix x."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n_cols:
            raise ValueError(
                f"expected ({self.n_cols}, k) operand, got {x.shape}"
            )
        out = np.zeros((self.n_rows, x.shape[1]))
        if self.nnz == 0:
            return out
        contrib = self.values[:, None] * x[self.col_idx]
        counts = np.diff(self.row_ptr)
        nonempty = counts > 0
        # Empty rows occupy no slots in contrib, so consecutive nonempty row
        # starts bound exactly one row's worth of contributions each.
        out[nonempty] = np.add.reduceat(
            contrib, self.row_ptr[:-1][nonempty], axis=0
        )
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        dense[rows, self.col_idx] = self.values
        return dense


@dataclass(eq=False)
class CliqueGraph:
    """Clique expansion of the interaction incidence structure.

    The adjacency is symmetric with a zero diagonal; weights are
    co-occurrence counts stored as float64.
    """

    adjacency: CsrMatrix
    dims: tuple[int, ...]
    offsets: tuple[int, ...]
    degrees: np.ndarray  # (n_nodes,) weighted degree, row sums of adjacency
    build_seconds: float = 0.0

    @property
    def node_count(self) -> int:
        return self.adjacency.n_rows


@dataclass(eq=False)
class NormalizedAdjacency:
    """Symmetric degree normalization of a clique graph adjacency.

    Entry (i, j) is A(i, j) / sqrt(d_i * d_j). Isolated nodes keep
    inv_sqrt_degree 0 and an all-zero row.
    """

    matrix: CsrMatrix
    inv_sqrt_degree: np.ndarray

    @property
    def node_count(self) -> int:
        return self.matrix.n_rows

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.matmul_dense(x)


@dataclass(frozen=True)
class GraphStats:
    nodes_per_dim: tuple[int, ...]
    node_count: int
    nnz: int
    undirected_edges: int
    max_degree: float
    mean_degree: float
    csr_bytes: int
    build_seconds: float

    def rows(self) -> list[tuple[str, str]]:
        out = [(f"nodes_dim{i}", str(d)) for i, d in enumerate(self.nodes_per_dim)]
        out += [
            ("node_count", str(self.node_count)),
            ("nnz", str(self.nnz)),
            ("undirected_edges", str(self.undirected_edges)),
            ("max_degree", f"{self.max_degree:.10g}"),
            ("mean_degree", f"{self.mean_degree:.10g}"),
            ("csr_bytes", str(self.csr_bytes)),
            ("build_seconds", f"{self.build_seconds:.6f}"),
        ]
        return out


def build_incidence(tensor: SparseTensor) -> CsrMatrix:
    """Node-by-interaction incidence matrix.

    Column e holds N ones, one per entity of interaction e under the global
    node numbering. Rows list a node's incident interactions in ascending
    order.
    """
    if len(tensor) == 0:
        raise ValueError("cannot build incidence of an empty tensor")
    shape = tensor.shape
    n_nodes = shape.n_nodes
    n_edges = len(tensor)
    gids = tensor.entries + np.asarray(shape.node_offsets, dtype=np.int64)
    flat_nodes = gids.ravel()
    flat_edges = np.repeat(np.arange(n_edges, dtype=np.int64), shape.order)
    # Stable sort by node keeps edge ids ascending within each node's row.
    order = np.argsort(flat_nodes, kind="stable")
    counts = np.bincount(flat_nodes, minlength=n_nodes)
    row_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(
        n_rows=n_nodes,
        n_cols=n_edges,
        row_ptr=row_ptr,
        col_idx=flat_edges[order],
        values=np.ones(flat_nodes.size),
    )


def _incidence_columns(incidence: CsrMatrix) -> np.ndarray:
    """Recover the (n_edges, N) node list of every interaction column."""
    if incidence.nnz == 0 or incidence.n_cols == 0:
        raise ValueError("incidence matrix has no interactions")
    if not np.all(incidence.values == 1.0):
        raise ValueError("incidence matrix must be binary")
    counts = np.bincount(incidence.col_idx, minlength=incidence.n_cols)
    n_per_edge = int(counts[0])
    if counts.min() != counts.max():
        raise ValueError("every interaction column must hold the same node count")
    if n_per_edge < 2:
        raise ValueError("interactions must span >= 2 nodes")
    rows_of = np.repeat(
        np.arange(incidence.n_rows, dtype=np.int64), np.diff(incidence.row_ptr)
    )
    order = np.argsort(incidence.col_idx, kind="stable")
    return rows_of[order].reshape(incidence.n_cols, n_per_edge)


def clique_expand(incidence: CsrMatrix, shape: TensorShape) -> CliqueGraph:
    """Expand incidence columns into a weighted co-occurrence graph.

    Computes the pairwise co-occurrence counts row by row: for each node,
    accumulate the members of all incident interactions in a dense scratch
    array, read the touched slots off a touched list, then reset only those
    slots. Work is proportional to the incident membership lists, never to
    a dense node-by-node product.
    """
    t0 = time.perf_counter()
    if incidence.n_rows != shape.n_nodes:
        raise ValueError(
            f"incidence has {incidence.n_rows} nodes, shape implies {shape.n_nodes}"
        )
    edge_nodes = _incidence_columns(incidence)
    n = incidence.n_rows

    scratch = np.zeros(n)
    row_cols: list[np.ndarray] = []
    row_vals: list[np.ndarray] = []
    lengths = np.zeros(n, dtype=np.int64)
    degrees = np.zeros(n)
    for i in range(n):
        eids = incidence.col_idx[incidence.row_ptr[i] : incidence.row_ptr[i + 1]]
        if eids.size == 0:
            continue
        members = edge_nodes[eids].ravel()
        np.add.at(scratch, members, 1.0)
        touched = np.unique(members)
        vals = scratch[touched].copy()
        scratch[touched] = 0.0
        # Node i co-occurs with itself once per incident interaction; the
        # expansion keeps the diagonal at zero.
        self_pos = np.searchsorted(touched, i)
        cols = np.delete(touched, self_pos)
        vals = np.delete(vals, self_pos)
        row_cols.append(cols)
        row_vals.append(vals)
        lengths[i] = cols.size
        degrees[i] = vals.sum()

    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=row_ptr[1:])
    adjacency = CsrMatrix(
        n_rows=n,
        n_cols=n,
        row_ptr=row_ptr,
        col_idx=np.concatenate(row_cols) if row_cols else np.empty(0, np.int64),
        values=np.concatenate(row_vals) if row_vals else np.empty(0),
    )
    return CliqueGraph(
        adjacency=adjacency,
        dims=shape.dims,
        offsets=shape.node_offsets,
        degrees=degrees,
        build_seconds=time.perf_counter() - t0,
    )


def normalize_adjacency(graph: CliqueGraph) -> NormalizedAdjacency:
    """Scale each weight by the inverse square roots of its endpoint degrees."""
    adj = graph.adjacency
    inv_sqrt = np.zeros(graph.node_count)
    positive = graph.degrees > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(graph.degrees[positive])
    if adj.nnz:
        rows = np.repeat(np.arange(adj.n_rows), np.diff(adj.row_ptr))
        # grouping the two scale factors keeps (i, j) and (j, i) bit-equal
        values = adj.values * (inv_sqrt[rows] * inv_sqrt[adj.col_idx])
    else:
        values = np.empty(0)
    matrix = CsrMatrix(
        n_rows=adj.n_rows,
        n_cols=adj.n_cols,
        row_ptr=adj.row_ptr.copy(),
        col_idx=adj.col_idx.copy(),
        values=values,
    )
    return NormalizedAdjacency(matrix=matrix, inv_sqrt_degree=inv_sqrt)


def graph_stats(graph: CliqueGraph) -> GraphStats:
    adj = graph.adjacency
    return GraphStats(
        nodes_per_dim=graph.dims,
        node_count=graph.node_count,
        nnz=adj.nnz,
        undirected_edges=adj.nnz // 2,
        max_degree=float(graph.degrees.max()) if graph.node_count else 0.0,
        mean_degree=float(graph.degrees.mean()) if graph.node_count else 0.0,
        csr_bytes=adj.nbytes,
        build_seconds=graph.build_seconds,
    )


def write_edge_list(graph: CliqueGraph, path) -> None:
    """Write undirected edges as ``i<TAB>j<TAB>w`` lines with i < j.

    Node ids are global and 0-based; lines come out in lexicographic (i, j)
    order. The header records node and edge counts.
    """
    adj = graph.adjacency
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# nodes {graph.node_count} edges {adj.nnz // 2}\n")
        for i in range(adj.n_rows):
            cols, vals = adj.row(i)
            upper = cols > i
            for j, w in zip(cols[upper], vals[upper]):
                fh.write(f"{i}\t{int(j)}\t{int(w)}\n")
