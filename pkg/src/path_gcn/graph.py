# MIT License
"""Provides the immutable undirected `Graph` in compressed sparse row (CSR) form,
and the sparse operators built from it:

- `transition_apply(g, f)`: the column-stochastic random walk transition A D⁻¹.
- `transition_adjoint_apply(g, f)`: its transpose D⁻¹ A, which averages each
  node's neighbours, ie. the operator a uniform walk estimates.
- `gcn_propagator_apply(g, f)`: the symmetric GCN propagator D̃^{-1/2} Ã D̃^{-1/2}.
- `spectral_radius_estimate(g, iterations)`: power iteration for the dominant
  eigenvalue modulus of A D⁻¹.

Node features are plain `numpy` arrays of shape (n, c) (a `FeatureMatrix`).
Isolated nodes are treated as having a self-loop for all walk operators, so the
walk stays put and A D⁻¹ stays well defined.
"""

from __future__ import annotations

from functools import cached_property
from typing import Iterable, Iterator, Tuple, Union

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from typing_extensions import TypeAlias

from . import logger

log = logger.getLogger(__name__)

FLOAT = np.float64  # The reference numeric path is 64-bit
INDEX = np.int64

FeatureMatrix: TypeAlias = NDArray[np.float64]
IndexArray: TypeAlias = NDArray[np.int64]
EdgeList: TypeAlias = Union[Iterable[Tuple[int, int]], ArrayLike]


class GraphError(Exception):
    "Raised if a graph cannot be built."


class ShapeError(ValueError):
    "Raised if an operand has the wrong shape for an operator."


class Graph:
    """An undirected graph with `n` nodes in CSR form.

    `neighbors[row_offsets[u]:row_offsets[u+1]]` are the neighbours of `u`,
    sorted ascending and without duplicates. Both directions of every edge are
    stored; a self-loop is stored once. `degrees[u]` is the length of row `u`.
    The arrays are read-only and the sparse operators are built lazily and
    cached, so a `Graph` can be shared freely between threads.
    """

    n: int
    row_offsets: IndexArray
    neighbors: IndexArray
    degrees: IndexArray

    def __init__(self, row_offsets: ArrayLike, neighbors: ArrayLike) -> None:
        self.row_offsets = np.array(row_offsets, dtype=INDEX)
        self.neighbors = np.array(neighbors, dtype=INDEX)
        self.n = len(self.row_offsets) - 1
        if self.n < 1:
            raise GraphError("A graph needs at least one node.")
        self.degrees = np.diff(self.row_offsets)
        for a in (self.row_offsets, self.neighbors, self.degrees):
            a.setflags(write=False)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.num_edges})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.row_offsets, other.row_offsets) and np.array_equal(
            self.neighbors, other.neighbors
        )

    __hash__ = None  # type: ignore

    def row(self, u: int) -> IndexArray:
        """Return the (sorted) neighbours of node `u`."""
        return self.neighbors[self.row_offsets[u] : self.row_offsets[u + 1]]

    @cached_property
    def self_loops(self) -> IndexArray:
        """Nodes with an explicit self-loop."""
        rows = np.repeat(np.arange(self.n, dtype=INDEX), self.degrees)
        return np.unique(rows[rows == self.neighbors])

    @cached_property
    def isolated(self) -> IndexArray:
        """Nodes with no edges at all."""
        return np.flatnonzero(self.degrees == 0)

    @property
    def num_edges(self) -> int:
        """The number of undirected edges, counting each self-loop once."""
        return (len(self.neighbors) + len(self.self_loops)) // 2

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean())

    def edges(self) -> Iterator[Tuple[int, int]]:
        """Yield each undirected edge once, as `(u, v)` with `u <= v`."""
        for u in range(self.n):
            for v in self.row(u):
                if u <= v:
                    yield u, int(v)

    def check(self) -> None:
        """Check the CSR invariants. Raises `GraphError` if one is broken."""
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.neighbors):
            raise GraphError("Row offsets do not span the neighbour array.")
        if np.any(self.degrees < 0):
            raise GraphError("Row offsets are not monotone.")
        if len(self.neighbors) and (
            self.neighbors.min() < 0 or self.neighbors.max() >= self.n
        ):
            raise GraphError("Neighbour index out of range.")
        for u in range(self.n):
            row = self.row(u)
            if np.any(np.diff(row) <= 0):
                raise GraphError(f"Row {u} is not strictly ascending.")
        if (self.adjacency != self.adjacency.T).nnz:
            raise GraphError("Adjacency is not symmetric.")

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """The 0/1 adjacency matrix A."""
        data = np.ones(len(self.neighbors), dtype=FLOAT)
        return sp.csr_matrix(
            (data, self.neighbors, self.row_offsets), shape=(self.n, self.n)
        )

    @cached_property
    def walk_degrees(self) -> FeatureMatrix:
        """Degrees used by the walk operators: isolated nodes count a self-loop."""
        return np.maximum(self.degrees, 1).astype(FLOAT)

    @cached_property
    def transition(self) -> sp.csr_matrix:
        """The column-stochastic transition A D⁻¹ (isolated nodes stay put)."""
        stay = np.zeros(self.n, dtype=FLOAT)
        stay[self.isolated] = 1.0
        a = self.adjacency + sp.diags(stay, format="csr")
        return sp.csr_matrix(a @ sp.diags(1.0 / self.walk_degrees))

    @cached_property
    def walk_average(self) -> sp.csr_matrix:
        """The row-stochastic operator D⁻¹ A = (A D⁻¹)ᵀ."""
        return sp.csr_matrix(self.transition.T)

    @cached_property
    def propagator(self) -> sp.csr_matrix:
        """The GCN propagator D̃^{-1/2} Ã D̃^{-1/2}, with Ã = A plus any missing
        self-loops."""
        a = self.adjacency.tolil()
        a.setdiag(1.0)
        a = sp.csr_matrix(a)
        d = np.asarray(a.sum(axis=1)).ravel()
        scale = sp.diags(1.0 / np.sqrt(d))
        return sp.csr_matrix(scale @ a @ scale)

    @cached_property
    def symmetric_transition(self) -> sp.csr_matrix:
        """D^{-1/2} A D^{-1/2}: symmetric and similar to A D⁻¹ (same eigenvalues)."""
        stay = np.zeros(self.n, dtype=FLOAT)
        stay[self.isolated] = 1.0
        a = self.adjacency + sp.diags(stay, format="csr")
        scale = sp.diags(1.0 / np.sqrt(self.walk_degrees))
        return sp.csr_matrix(scale @ a @ scale)


def graph_from_edge_list(edges: EdgeList, n: int) -> Graph:
    """Build a `Graph` on `n` nodes from (u, v) pairs.

    The result is the symmetric closure of `edges` with duplicates removed;
    self-loops are kept as a single entry. Raises `GraphError` if `n == 0` or
    an index is out of range."""
    if n <= 0:
        raise GraphError(f"Graph needs n >= 1 nodes (got n={n}).")
    pairs = np.array(list(edges) if not isinstance(edges, np.ndarray) else edges)
    pairs = pairs.astype(INDEX, copy=False).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[np.any((pairs < 0) | (pairs >= n), axis=1)][0]
        raise GraphError(
            f"Edge ({bad[0]}, {bad[1]}) has a node index out of range [0, {n})."
        )
    u, v = pairs[:, 0], pairs[:, 1]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    keys = np.unique(src * n + dst)  # sorted by row, then by neighbour
    rows, cols = keys // n, keys % n
    row_offsets = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(np.bincount(rows, minlength=n), out=row_offsets[1:])
    g = Graph(row_offsets, cols)
    if len(g.isolated):
        log.debug(f"{len(g.isolated)} isolated nodes in graph with n={n}.")
    return g


def check_features(g: Graph, f: ArrayLike, name: str = "features") -> FeatureMatrix:
    """Return `f` as a float64 array with `g.n` rows. Raises `ShapeError` on a
    dimension mismatch."""
    f = np.asarray(f, dtype=FLOAT)
    if f.ndim not in (1, 2) or f.shape[0] != g.n:
        raise ShapeError(
            f"Dimension mismatch: {name} has shape {f.shape}, graph has n={g.n}."
        )
    return f


def transition_apply(g: Graph, f: ArrayLike) -> FeatureMatrix:
    """Return (A D⁻¹) f: `out[j] = sum(f[i] / degrees[i] for i in N(j))`.
    Column sums of A D⁻¹ are 1, so the total mass of each channel is kept."""
    return np.asarray(g.transition @ check_features(g, f))


def transition_adjoint_apply(g: Graph, f: ArrayLike) -> FeatureMatrix:
    """Return (A D⁻¹)ᵀ f = D⁻¹ A f: `out[j]` is the mean of `f` over the
    neighbours of `j`. This is the expected value of `f` one uniform walk step
    away from `j`."""
    return np.asarray(g.walk_average @ check_features(g, f))


def gcn_propagator_apply(g: Graph, f: ArrayLike) -> FeatureMatrix:
    """Return D̃^{-1/2} Ã D̃^{-1/2} f (a symmetric operator)."""
    return np.asarray(g.propagator @ check_features(g, f))


def spectral_radius_estimate(g: Graph | None, iterations: int, seed: int = 0) -> float:
    """Estimate the largest eigenvalue modulus of A D⁻¹ by power iteration.

    A D⁻¹ is similar to the symmetric S = D^{-1/2} A D^{-1/2}, so the estimate
    is sqrt of the Rayleigh quotient of S² after `iterations` power steps. The
    Rayleigh quotient never exceeds the true value, which is at most 1."""
    if g is None or g.n == 0:
        return 0.0
    if iterations < 1:
        raise GraphError(f"iterations must be >= 1 (got {iterations}).")
    s = g.symmetric_transition
    rng = np.random.default_rng(seed)
    x = rng.random(g.n) + 0.5  # A positive start overlaps the Perron vector
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = s @ (s @ x)
        estimate = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
    return float(np.sqrt(max(estimate, 0.0)))
