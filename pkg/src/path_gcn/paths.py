# MIT License
"""Provides the seeded uniform random-walk sampler and the `PathSet` it produces.

- `WalkConfig(k, p, seed)`: walk length (in nodes, including the origin),
  walks per origin node and the 64-bit seed.
- `sample_paths(g, cfg, workers=1)`: sample `p` walks of `k` nodes from every
  node of `g`.
- `resample(g, cfg, iteration)`: `sample_paths()` with the seed mixed with an
  iteration number, so training can draw fresh paths at every step and replay
  them exactly later.
- `PathSet`: the read-only `(n, p, k)` tensor of node indices, with the sparse
  per-step averaging operators used by the path convolution and a little-endian
  binary dump format for debugging.

Origins are sampled in fixed blocks of `BLOCK_SIZE` nodes, and each block draws
from its own `numpy` generator, so blocks can be sampled concurrently without
changing the output.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from typing_extensions import Literal

from . import logger
from .graph import Graph

log = logger.getLogger(__name__)

BLOCK_SIZE = 1024  # Origins per independent RNG stream

# Binary dump: header then row-major little-endian int32 indices
PATHS_FMT = "<4sIIIQ"  # magic, n, p, k, seed
PATHS_MAGIC = b"PGPS"
PATHS_HEADER_LEN = struct.calcsize(PATHS_FMT)
PATHS_DTYPE = np.dtype("<i4")


class PathError(Exception):
    "Raised if a walk configuration or a PathSet is invalid."


def mix(seed: int, iteration: int) -> int:
    """Return the effective 64-bit seed for `iteration` of the stream `seed`."""
    state = np.random.SeedSequence([seed, iteration]).generate_state(1, np.uint64)
    return int(state[0])


def stream_seed(seed: int, *key: int) -> int:
    """Return a 64-bit seed for the independent stream `key` derived from
    `seed` (eg. dropout masks, parameter initialisation)."""
    seq = np.random.SeedSequence(seed, spawn_key=key)
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class WalkConfig:
    """Parameters for one draw of paths: `k` nodes per walk (including the
    origin), `p` walks per origin and a 64-bit `seed`. Isolated nodes always
    repeat themselves."""

    k: int
    p: int
    seed: int = 0
    isolated_policy: Literal["self-loop"] = "self-loop"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise PathError(f"Walk length k must be >= 1 (got {self.k}).")
        if self.p < 1:
            raise PathError(f"Paths per node p must be >= 1 (got {self.p}).")
        if not 0 <= self.seed < 2**64:
            raise PathError(f"Seed must be a 64-bit unsigned integer: {self.seed}.")
        if self.isolated_policy != "self-loop":
            raise PathError(f"Unknown isolated node policy: {self.isolated_policy}.")


class PathHeader(NamedTuple):
    """The header of a PathSet dump file."""

    magic: bytes
    n: int
    p: int
    k: int
    seed: int

    @staticmethod
    def from_bytes(data: bytes) -> PathHeader:
        if len(data) < PATHS_HEADER_LEN:
            raise PathError("PathSet file is too short for its header.")
        header = PathHeader(*struct.unpack(PATHS_FMT, data[:PATHS_HEADER_LEN]))
        if header.magic != PATHS_MAGIC:
            raise PathError(f"Not a PathSet file: bad magic {header.magic!r}.")
        return header

    def to_bytes(self) -> bytes:
        return struct.pack(PATHS_FMT, *self)


class PathSet:
    """An `(n, p, k)` tensor of node indices: `p` walks of `k` nodes from each
    of the `n` origin nodes. `indices[j, w, 0] == j` for every walk."""

    indices: NDArray[np.int32]
    seed: int

    def __init__(self, indices: ArrayLike, seed: int = 0) -> None:
        indices = np.array(indices, dtype=np.int32)
        if indices.ndim != 3 or 0 in indices.shape:
            raise PathError(f"PathSet indices must be (n, p, k): {indices.shape}.")
        indices.setflags(write=False)
        self.indices = indices
        self.seed = seed

    @property
    def n(self) -> int:
        return int(self.indices.shape[0])

    @property
    def p(self) -> int:
        return int(self.indices.shape[1])

    @property
    def k(self) -> int:
        return int(self.indices.shape[2])

    def __repr__(self) -> str:
        return f"PathSet(n={self.n}, p={self.p}, k={self.k}, seed={self.seed})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PathSet):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)

    __hash__ = None  # type: ignore

    def check(self, g: Graph) -> None:
        """Check the walks against `g`: every walk starts at its origin, and
        every step follows an edge (or stays put at an isolated node). Raises
        `PathError` on the first violation."""
        idx = self.indices
        if self.n != g.n:
            raise PathError(f"PathSet has n={self.n} origins, graph has n={g.n}.")
        if idx.min() < 0 or idx.max() >= g.n:
            raise PathError("PathSet node index out of range.")
        origins = np.arange(self.n)[:, None]
        if np.any(idx[:, :, 0] != origins):
            j = int(np.flatnonzero(np.any(idx[:, :, 0] != origins, axis=1))[0])
            raise PathError(f"Walk from node {j} does not start at its origin.")
        a = idx[:, :, :-1].ravel().astype(np.int64)
        b = idx[:, :, 1:].ravel().astype(np.int64)
        edge = np.asarray(g.adjacency[a, b]).ravel() > 0
        stay = (a == b) & (g.degrees[a] == 0)
        if not np.all(edge | stay):
            bad = int(np.flatnonzero(~(edge | stay))[0])
            raise PathError(f"Step {a[bad]} -> {b[bad]} is not an edge of the graph.")

    @cached_property
    def step_operators(self) -> List[Optional[sp.csr_matrix]]:
        """`P[i][j, v]` is the fraction of the walks from `j` which are at node
        `v` after step `i`. `P[0]` is the identity and is returned as `None`
        so callers can treat the origin term exactly."""
        n, p, k = self.indices.shape
        rows = np.repeat(np.arange(n, dtype=np.int64), p)
        ops: List[Optional[sp.csr_matrix]] = [None]
        for i in range(1, k):
            cols = self.indices[:, :, i].ravel().astype(np.int64)
            m = sp.csr_matrix(
                (np.ones(n * p), (rows, cols)), shape=(n, n), dtype=np.float64
            )
            m.sum_duplicates()
            m.data /= p
            ops.append(m)
        return ops

    def step_counts(self, origin: int) -> List[NDArray[np.int64]]:
        """For each step `i`, the visit count of every node over the walks from
        `origin` (a length `n` array)."""
        return [
            np.bincount(self.indices[origin, :, i], minlength=self.n)
            for i in range(self.k)
        ]

    def to_bytes(self) -> bytes:
        header = PathHeader(PATHS_MAGIC, self.n, self.p, self.k, self.seed)
        return header.to_bytes() + self.indices.astype(PATHS_DTYPE).tobytes()

    @staticmethod
    def from_bytes(data: bytes) -> PathSet:
        h = PathHeader.from_bytes(data)
        payload = data[PATHS_HEADER_LEN:]
        if len(payload) != h.n * h.p * h.k * PATHS_DTYPE.itemsize:
            raise PathError(
                f"PathSet payload is {len(payload)} bytes, "
                f"expected {h.n * h.p * h.k * PATHS_DTYPE.itemsize}."
            )
        indices = np.frombuffer(payload, dtype=PATHS_DTYPE).reshape(h.n, h.p, h.k)
        return PathSet(indices, h.seed)

    def save(self, filename: Path | str) -> None:
        """Write the PathSet to `filename` in the binary dump format."""
        Path(filename).write_bytes(self.to_bytes())

    @staticmethod
    def load(filename: Path | str) -> PathSet:
        return PathSet.from_bytes(Path(filename).read_bytes())


def _sample_block(
    g: Graph, cfg: WalkConfig, seed: int, block: int
) -> NDArray[np.int32]:
    # Sample the walks for the origins in `block` from the block's own stream
    start, stop = block * BLOCK_SIZE, min((block + 1) * BLOCK_SIZE, g.n)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    walks = np.empty((stop - start, cfg.p, cfg.k), dtype=np.int32)
    current = np.repeat(np.arange(start, stop, dtype=np.int64), cfg.p)
    walks[:, :, 0] = current.reshape(stop - start, cfg.p)
    last = max(len(g.neighbors) - 1, 0)
    for i in range(1, cfg.k):
        deg = g.degrees[current]
        pick = np.minimum((rng.random(len(current)) * deg).astype(np.int64), deg - 1)
        if len(g.neighbors):
            offset = np.clip(g.row_offsets[current] + pick, 0, last)
            nxt = g.neighbors[offset]
            current = np.where(deg > 0, nxt, current)  # Isolated nodes stay put
        walks[:, :, i] = current.reshape(stop - start, cfg.p)
    return walks


def sample_paths(g: Graph, cfg: WalkConfig, workers: int = 1) -> PathSet:
    """Sample `cfg.p` uniform random walks of `cfg.k` nodes from every node of
    `g`. The result depends only on `g` and `cfg.seed`, never on `workers`."""
    blocks = range((g.n + BLOCK_SIZE - 1) // BLOCK_SIZE)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _sample_block(g, cfg, cfg.seed, b), blocks))
    else:
        parts = [_sample_block(g, cfg, cfg.seed, b) for b in blocks]
    return PathSet(np.concatenate(parts, axis=0), cfg.seed)


def resample(g: Graph, cfg: WalkConfig, iteration: int, workers: int = 1) -> PathSet:
    """Return the PathSet for `iteration` of the path stream seeded by `cfg.seed`."""
    seed = mix(cfg.seed, iteration)
    log.debug(f"Resampling paths: iteration={iteration} seed={seed:#018x}")
    return sample_paths(g, WalkConfig(cfg.k, cfg.p, seed), workers)
