# MIT License
"""The learnable spatial operator: path convolutions over sampled walks, their
deterministic expectation and the effective kernels they induce.

A kernel slice `s` holds the weights for one layer: shape `(k,)` shared by all
channels, or `(c, k)` with one weight vector per channel (depthwise). Along a
walk `y` from node `j` the convolution is `sum(s[i] * f[y[i]] for i < k)`,
averaged over the `p` walks from `j`.

The walk average converges to `sum(s[i] * M**i @ f)`, where `M = D⁻¹ A` is the
transpose of the column-stochastic transition A D⁻¹ (see `graph.py`).
"""

from __future__ import annotations

import enum
import math
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import logger
from .data_table import TableTuple
from .graph import (
    FLOAT,
    FeatureMatrix,
    Graph,
    ShapeError,
    transition_adjoint_apply,
    transition_apply,
)
from .paths import PathSet, WalkConfig, sample_paths

log = logger.getLogger(__name__)

KernelSlice = NDArray[np.float64]  # (k,) or (c, k)

INIT_NOISE = 0.1  # Relative noise on the origin weight at initialisation


class KernelError(Exception):
    "Raised if a spatial kernel is malformed or used with the wrong layer."


class KernelVariant(str, enum.Enum):
    """How the kernel weights are shared between layers and channels."""

    GLOBAL = "global"  # One (k,) vector for every layer and channel
    PER_LAYER = "per-layer"  # One (k,) vector per layer
    DEPTHWISE = "depthwise"  # One (k,) vector per layer and channel

    def __str__(self) -> str:
        return self.value


class SpatialKernel:
    """The learnable weights `s` of all the path convolutions in a model."""

    variant: KernelVariant
    L: int
    c: int
    k: int
    weights: NDArray[np.float64]

    def __init__(
        self,
        variant: KernelVariant | str,
        L: int,
        c: int,
        k: int,
        weights: ArrayLike | None = None,
    ) -> None:
        self.variant = KernelVariant(variant)
        self.L, self.c, self.k = L, c, k
        if k < 1 or c < 1 or L < 0:
            raise KernelError(f"Invalid kernel size: L={L}, c={c}, k={k}.")
        if weights is None:
            weights = np.zeros(self.shape)
        self.weights = np.array(weights, dtype=FLOAT)
        if self.weights.shape != self.shape:
            raise KernelError(
                f"{self.variant} kernel weights have shape {self.weights.shape}, "
                f"expected {self.shape}."
            )
        if not np.all(np.isfinite(self.weights)):
            raise KernelError("Kernel weights must be finite.")

    def __repr__(self) -> str:
        return f"SpatialKernel({self.variant}, L={self.L}, c={self.c}, k={self.k})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return (
            (self.k,) if self.variant == KernelVariant.GLOBAL else
            (self.L, self.k) if self.variant == KernelVariant.PER_LAYER else
            (self.L, self.c, self.k)
        )  # fmt: skip

    @staticmethod
    def initialize(
        variant: KernelVariant | str, L: int, c: int, k: int, rng: np.random.Generator
    ) -> SpatialKernel:
        """Weights are uniform in [-1/k, 1/k], except the origin weight which
        starts near 1/k, so the initial operator is close to a local average."""
        kernel = SpatialKernel(variant, L, c, k)
        w = rng.uniform(-1.0 / k, 1.0 / k, size=kernel.shape)
        noise = rng.uniform(-INIT_NOISE / k, INIT_NOISE / k, size=w[..., 0].shape)
        w[..., 0] = 1.0 / k + noise
        kernel.weights = w
        return kernel

    def layer(self, l: int) -> KernelSlice:
        """Return the (read-only) kernel slice for layer `l`."""
        if l < 0 or (self.variant != KernelVariant.GLOBAL and l >= self.L):
            raise KernelError(f"Layer {l} out of range for a kernel with L={self.L}.")
        s = self.weights if self.variant == KernelVariant.GLOBAL else self.weights[l]
        view = s.view()
        view.setflags(write=False)
        return view

    def accumulate(
        self, grad: NDArray[np.float64], l: int, grad_s: KernelSlice
    ) -> None:
        """Add the gradient of layer `l`'s slice into `grad` (shaped like the
        weights). The global kernel sums the gradients of all layers."""
        if self.variant == KernelVariant.GLOBAL:
            grad += grad_s
        else:
            grad[l] += grad_s


def check_features(f: ArrayLike, n: int | None = None) -> FeatureMatrix:
    f = np.asarray(f, dtype=FLOAT)
    if f.ndim != 2 or (n is not None and f.shape[0] != n):
        raise ShapeError(f"Feature matrix has shape {f.shape}, expected ({n}, c).")
    return f


def _weights(s: ArrayLike, k: int, c: int) -> NDArray[np.float64]:
    # Return the kernel slice as a (1, k) or (c, k) array of per-channel weights
    s = np.asarray(s, dtype=FLOAT)
    if s.ndim == 1 and s.shape == (k,):
        return s[None, :]
    if s.ndim == 2 and s.shape == (c, k):
        return s
    raise ShapeError(
        f"Kernel slice has shape {s.shape}, expected ({k},) or ({c}, {k})."
    )


def _slice_grad(grad: NDArray[np.float64], s: ArrayLike) -> KernelSlice:
    # Reduce per-channel gradients (c, k) to the shape of the kernel slice
    return grad.sum(axis=0) if np.ndim(s) == 1 else grad


def path_conv_forward(paths: PathSet, f: ArrayLike, s: ArrayLike) -> FeatureMatrix:
    """Return the path convolution of `f` with kernel slice `s` over `paths`:
    `out[j] = mean over w of sum(s[i] * f[paths[j, w, i]] for i < k)`.

    The origin term is applied exactly and zero weights are skipped, so the
    kernel `[1, 0, ..., 0]` returns `f` unchanged."""
    f = check_features(f, paths.n)
    w = _weights(s, paths.k, f.shape[1])
    out = f * w[:, 0]
    for i, step in enumerate(paths.step_operators[1:], start=1):
        if np.any(w[:, i]):
            out = out + (step @ f) * w[:, i]
    return out


def path_conv_backward(
    paths: PathSet, f: ArrayLike, s: ArrayLike, grad_out: ArrayLike
) -> Tuple[FeatureMatrix, KernelSlice]:
    """Return `(grad_f, grad_s)`, the exact adjoint of `path_conv_forward()` for
    the same `paths`."""
    f = check_features(f, paths.n)
    grad_out = check_features(grad_out, paths.n)
    if grad_out.shape != f.shape:
        raise ShapeError(f"Gradient shape {grad_out.shape} != features {f.shape}.")
    w = _weights(s, paths.k, f.shape[1])
    grad_w = np.zeros((f.shape[1], paths.k), dtype=FLOAT)
    grad_f = grad_out * w[:, 0]
    grad_w[:, 0] = (grad_out * f).sum(axis=0)
    for i, step in enumerate(paths.step_operators[1:], start=1):
        grad_w[:, i] = (grad_out * (step @ f)).sum(axis=0)
        if np.any(w[:, i]):
            grad_f = grad_f + (step.T @ grad_out) * w[:, i]
    return grad_f, _slice_grad(grad_w, s)


def walk_powers(g: Graph, f: ArrayLike, k: int) -> List[FeatureMatrix]:
    """Return `[f, M @ f, ..., M**(k-1) @ f]` for the walk average `M = D⁻¹ A`.
    The powers are shared by all channels of a depthwise kernel."""
    powers = [check_features(f, g.n)]
    for _ in range(k - 1):
        powers.append(transition_adjoint_apply(g, powers[-1]))
    return powers


def expected_conv(
    g: Graph, f: ArrayLike, s: ArrayLike, powers: Sequence[FeatureMatrix] | None = None
) -> FeatureMatrix:
    """Return the expectation of the path convolution over uniform walks:
    `sum(s[i] * M**i @ f for i < k)`. `powers` may be passed in if already
    computed by `walk_powers()`."""
    s = np.asarray(s, dtype=FLOAT)
    k = s.shape[-1]
    if k < 1:
        raise ShapeError("Kernel slice must have length k >= 1.")
    f = check_features(f, g.n)
    w = _weights(s, k, f.shape[1])
    if powers is None:
        powers = walk_powers(g, f, k)
    out = f * w[:, 0]
    for i in range(1, k):
        if np.any(w[:, i]):
            out = out + powers[i] * w[:, i]
    return out


def expected_conv_backward(
    g: Graph,
    f: ArrayLike,
    s: ArrayLike,
    grad_out: ArrayLike,
    powers: Sequence[FeatureMatrix] | None = None,
) -> Tuple[FeatureMatrix, KernelSlice]:
    """Return `(grad_f, grad_s)` for `expected_conv()`. The adjoint of
    `M = D⁻¹ A` is the transition A D⁻¹, applied in Horner form."""
    s = np.asarray(s, dtype=FLOAT)
    k = s.shape[-1]
    f = check_features(f, g.n)
    grad_out = check_features(grad_out, g.n)
    w = _weights(s, k, f.shape[1])
    if powers is None:
        powers = walk_powers(g, f, k)
    grad_w = np.stack([(grad_out * powers[i]).sum(axis=0) for i in range(k)], axis=1)
    grad_f = grad_out * w[:, k - 1]
    for i in range(k - 2, -1, -1):
        grad_f = grad_out * w[:, i] + transition_apply(g, grad_f)
    return grad_f, _slice_grad(grad_w, s)


def monte_carlo_error(
    g: Graph, f: ArrayLike, s: ArrayLike, p_values: Sequence[int], seed: int = 0
) -> List[Tuple[int, float]]:
    """Return `(p, rms)` for each `p`: the root mean square difference between
    the path convolution over `p` sampled walks per node and its expectation."""
    s = np.asarray(s, dtype=FLOAT)
    k = s.shape[-1]
    f = check_features(f, g.n)
    expected = expected_conv(g, f, s)
    results = []
    for p in p_values:
        paths = sample_paths(g, WalkConfig(k, p, seed))
        err = path_conv_forward(paths, f, s) - expected
        rms = float(np.sqrt(np.mean(err * err)))
        log.debug(f"Monte-Carlo error: p={p} rms={rms:.3e}")
        results.append((p, rms))
    return results


def loglog_slope(results: Sequence[Tuple[int, float]]) -> float:
    """Least squares slope of log(rms error) against log(p). A Monte-Carlo
    estimate converges at a slope of -1/2."""
    p, err = np.array([r[0] for r in results]), np.array([r[1] for r in results])
    if len(results) < 2 or np.any(err <= 0):
        raise KernelError("Need at least two non-zero errors to fit a slope.")
    slope, _ = np.polyfit(np.log(p), np.log(err), 1)
    return float(slope)


def effective_kernel(
    g: Graph, s: ArrayLike, origin: int, paths: PathSet | None = None
) -> Dict[int, float]:
    """Return the weight the kernel `s` (shape `(k,)`) places on each node for
    the convolution at `origin`, as `{node: weight}` sorted by node.

    With `paths`, the weights are those of the sampled walks from `origin`.
    Without, they are the row of `sum(s[i] * M**i)` for `origin`, which the
    sampled weights converge to as `p` grows."""
    s = np.asarray(s, dtype=FLOAT)
    if s.ndim != 1:
        raise ShapeError(f"Effective kernel needs a (k,) kernel, got {s.shape}.")
    if not 0 <= origin < g.n:
        raise KernelError(f"Origin node {origin} out of range [0, {g.n}).")
    weight = np.zeros(g.n, dtype=FLOAT)
    if paths is not None:
        if paths.k != len(s):
            raise ShapeError(f"Kernel length {len(s)} != path length {paths.k}.")
        for i, counts in enumerate(paths.step_counts(origin)):
            weight += s[i] * counts / paths.p
    else:
        # Row `origin` of M**i is column `origin` of (A D⁻¹)**i
        v = np.zeros(g.n, dtype=FLOAT)
        v[origin] = 1.0
        for i in range(len(s)):
            weight += s[i] * v
            v = transition_apply(g, v)
    return {int(j): float(weight[j]) for j in np.flatnonzero(weight)}


Walk = Tuple[Tuple[int, ...], float]


def enumerate_walks(g: Graph, origin: int, k: int) -> Iterator[Walk]:
    """Yield every walk of `k` nodes from `origin` with its probability under
    the uniform walk (isolated nodes stay put with probability 1)."""

    def extend(walk: Tuple[int, ...], prob: float) -> Iterator[Walk]:
        if len(walk) == k:
            yield walk, prob
            return
        row = g.row(walk[-1])
        if len(row) == 0:
            yield from extend(walk + (walk[-1],), prob)
        for v in row:
            yield from extend(walk + (int(v),), prob / len(row))

    yield from extend((origin,), 1.0)


def exhaustive_conv(g: Graph, f: ArrayLike, s: ArrayLike) -> FeatureMatrix:
    """The path convolution averaged over every walk with its probability,
    instead of over sampled walks. Only practical for small graphs and `k`."""
    s = np.asarray(s, dtype=FLOAT)
    k = s.shape[-1]
    f = check_features(f, g.n)
    w = _weights(s, k, f.shape[1])
    out = np.zeros_like(f)
    for j in range(g.n):
        for walk, prob in enumerate_walks(g, j, k):
            out[j] += prob * sum(w[:, i] * f[v] for i, v in enumerate(walk))
    return out


def cost_model(g: Graph, k: int, p: int) -> Dict[str, int]:
    """Operation counts for one path convolution: `n*k*p` gathers for the
    sampled form against `(k-1)` sparse products of `2m` entries for the
    deterministic form (per channel)."""
    return {
        "stochastic_ops": g.n * k * p,
        "deterministic_ops": len(g.neighbors) * (k - 1),
    }


def kernel_table(
    g: Graph,
    kernel: SpatialKernel,
    origins: Sequence[int],
    paths: Sequence[PathSet],
    layers: Sequence[int],
    channels: Sequence[int] = (0,),
) -> TableTuple:
    """Tabulate the sampled and expected effective kernels for each layer,
    channel and origin, one row per node reached. `paths[l]` are the walks
    used for layer `l`."""
    rows: List[Tuple[int, int, int, int, float, float]] = []
    for l in layers:
        s = kernel.layer(l)
        for ch in channels if s.ndim == 2 else (0,):
            sc = s[ch] if s.ndim == 2 else s
            for origin in origins:
                sampled = effective_kernel(g, sc, origin, paths[l])
                expected = effective_kernel(g, sc, origin)
                for node in sorted(set(sampled) | set(expected)):
                    sw, ew = sampled.get(node, 0.0), expected.get(node, 0.0)
                    rows.append((l, ch, origin, node, sw, ew))
    return TableTuple(
        "Effective kernels",
        "{:>5} {:>7} {:>6} {:>7} {:>10.4f} {:>13.4f}",
        "layer channel origin node_id stochastic deterministic",
        rows,
    )


def kernel_norm(s: ArrayLike) -> float:
    """The l1 norm of a kernel slice (the largest over channels). With a norm
    of at most 1 the deterministic operator never increases the sup-norm."""
    s = np.asarray(s, dtype=FLOAT)
    return float(np.abs(s).sum(axis=-1).max()) if s.size else math.nan
