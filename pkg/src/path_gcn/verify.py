# MIT License
"""Numerical checks of the path convolution and the network, run by the
`verify` command and shared with the tests.

Each suite returns a list of `CheckResult`s:
- `convergence`: sampled convolutions approach their expectation at rate
  p^(-1/2).
- `exhaustive`: enumerating every walk with its probability reproduces the
  expected convolution on all small connected graphs.
- `adjoint`: the backward operators are the exact adjoints of the forward ones,
  and the transition operator keeps the mass of each channel.
- `identity`: the kernel `[1, 0, ...]` is the identity, and a `k = 1` network
  is a plain multi-layer perceptron.
- `stability`: convolutions with an l1-normalised kernel never increase the
  sup-norm, and the spectral radius of the transition is at most 1.
- `gradients`: every layer's backward pass against central differences.
- `end-to-end`: the gradients of the whole network against central differences.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np
from more_itertools import powerset
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components

from . import logger
from .data_table import TableTuple
from .graph import (
    Graph,
    graph_from_edge_list,
    spectral_radius_estimate,
    transition_adjoint_apply,
    transition_apply,
)
from .model import Mode, ModelConfig, PathGCNModel, forward, loss_and_grads
from .nn import (
    DenseParam,
    dropout_forward,
    masked_cross_entropy,
    pointwise_conv_backward,
    pointwise_conv_forward,
    relu_backward,
    relu_forward,
)
from .pathconv import (
    exhaustive_conv,
    expected_conv,
    expected_conv_backward,
    kernel_norm,
    loglog_slope,
    monte_carlo_error,
    path_conv_backward,
    path_conv_forward,
)
from .paths import WalkConfig, resample, sample_paths

log = logger.getLogger(__name__)

Array = NDArray[np.float64]

CONVERGENCE_P = (10, 100, 1000, 10000)
SLOPE_RANGE = (-0.65, -0.35)
EXHAUSTIVE_TOL = 1e-12
ADJOINT_TOL = 1e-12
IDENTITY_TOL = 1e-10
LAYER_GRAD_TOL = 1e-6
MODEL_GRAD_TOL = 1e-4


class VerificationError(Exception):
    "Raised if any verification check fails."


class CheckResult(NamedTuple):
    suite: str
    name: str
    value: float
    limit: float
    passed: bool


def central_difference(fn: Callable[[], float], x: Array, eps: float = 1e-5) -> Array:
    """Return the central difference gradient of `fn()` with respect to the
    entries of `x`, which are perturbed in place and restored."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + eps
        up = fn()
        x[i] = orig - eps
        down = fn()
        x[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a: Array, b: Array) -> float:
    """`|a - b| / max(|a| + |b|, tiny)` in the Frobenius norm."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale


def _check(suite: str, name: str, value: float, limit: float) -> CheckResult:
    # Pass if the value is at most the limit
    result = CheckResult(suite, name, float(value), limit, bool(value <= limit))
    log.debug(f"{suite}/{name}: {value:.3e} (limit {limit:.0e})")
    return result


def _random_kernel(k: int, rng: np.random.Generator, c: int = 0) -> Array:
    # A kernel slice with l1 norm 1 (per channel)
    s = rng.normal(size=(c, k) if c else (k,))
    return s / np.abs(s).sum(axis=-1, keepdims=True)


def convergence(g: Graph, k: int = 5, seed: int = 0) -> List[CheckResult]:
    """The log-log slope of the RMS error against p must be near -1/2, and the
    error at the largest p within 10× of its extrapolation from the smallest."""
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(g.n, 4))
    s = _random_kernel(k, rng)
    results = monte_carlo_error(g, f, s, CONVERGENCE_P, seed)
    slope = loglog_slope(results)
    (p0, e0), (p1, e1) = results[0], results[-1]
    extrapolated = e0 * np.sqrt(p0 / p1)
    lo, hi = SLOPE_RANGE
    log.info(f"Monte-Carlo error slope: {slope:.3f} over p={list(CONVERGENCE_P)}")
    return [
        CheckResult("convergence", "loglog slope", slope, hi, lo <= slope <= hi),
        _check("convergence", f"error ratio at p={p1}", e1 / extrapolated, 10.0),
    ]


def small_connected_graphs(max_nodes: int = 5) -> List[Graph]:
    """Every connected graph (as labelled edge sets) with up to `max_nodes`."""
    graphs = []
    for n in range(1, max_nodes + 1):
        pairs = list(itertools.combinations(range(n), 2))
        for edges in powerset(pairs):
            g = graph_from_edge_list(list(edges), n)
            if connected_components(g.adjacency, directed=False)[0] == 1:
                graphs.append(g)
    return graphs


def exhaustive(max_nodes: int = 5, max_k: int = 3, seed: int = 0) -> List[CheckResult]:
    """Compare `exhaustive_conv()` with `expected_conv()` for k <= `max_k`."""
    rng = np.random.default_rng(seed)
    graphs = small_connected_graphs(max_nodes)
    worst = 0.0
    for g, k in itertools.product(graphs, range(1, max_k + 1)):
        f = rng.normal(size=(g.n, 2))
        s = rng.normal(size=k)
        diff = exhaustive_conv(g, f, s) - expected_conv(g, f, s)
        worst = max(worst, float(np.abs(diff).max()))
    name = f"{len(graphs)} graphs, k<={max_k}"
    return [_check("exhaustive", name, worst, EXHAUSTIVE_TOL)]


def _inner(a: Array, b: Array) -> float:
    return float(np.sum(a * b))


def adjoint(g: Graph, k: int = 4, p: int = 3, seed: int = 0) -> List[CheckResult]:
    """Dot product tests: <A x, y> == <x, Aᵀ y> for each forward operator."""
    rng = np.random.default_rng(seed)
    c = 3
    f, y = rng.normal(size=(g.n, c)), rng.normal(size=(g.n, c))
    s = rng.normal(size=(c, k))
    paths = sample_paths(g, WalkConfig(k, p, seed))

    def gap(lhs: float, rhs: float) -> float:
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)

    mass = np.abs(transition_apply(g, f).sum(axis=0) - f.sum(axis=0)).max()
    grad_f, _ = path_conv_backward(paths, f, s, y)
    grad_e, _ = expected_conv_backward(g, f, s, y)
    return [
        _check(
            "adjoint",
            "transition",
            gap(
                _inner(transition_apply(g, f), y),
                _inner(f, transition_adjoint_apply(g, y)),
            ),
            ADJOINT_TOL,
        ),
        _check("adjoint", "mass conservation", mass, 1e-10),
        _check(
            "adjoint",
            "path conv",
            gap(_inner(path_conv_forward(paths, f, s), y), _inner(f, grad_f)),
            ADJOINT_TOL,
        ),
        _check(
            "adjoint",
            "expected conv",
            gap(_inner(expected_conv(g, f, s), y), _inner(f, grad_e)),
            ADJOINT_TOL,
        ),
    ]


def _mlp_logits(model: PathGCNModel, x: Array) -> Array:
    # The network with k = 1 written as a plain MLP: the kernel only scales
    h = relu_forward(pointwise_conv_forward(x, model.embedding))
    for l, block in enumerate(model.blocks):
        s = np.asarray(model.kernel.layer(l))
        h = relu_forward(pointwise_conv_forward(h * s[..., 0], block))
    return pointwise_conv_forward(h, model.classifier)


def identity(g: Graph, k: int = 4, p: int = 3, seed: int = 0) -> List[CheckResult]:
    """The kernel e0 leaves features bitwise unchanged, and a k = 1 network is
    an MLP in both modes."""
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(g.n, 3))
    e0 = np.zeros(k)
    e0[0] = 1.0
    paths = sample_paths(g, WalkConfig(k, p, seed))
    same_paths = np.array_equal(path_conv_forward(paths, f, e0), f)
    same_expected = np.array_equal(expected_conv(g, f, e0), f)
    cfg = ModelConfig(L=2, c=4, k=1, p=p, p_drop=0.0, seed=seed)
    model = PathGCNModel.build(cfg, f.shape[1], 2)
    mlp = _mlp_logits(model, f)
    return [
        _check("identity", "e0 path conv (bitwise)", 0.0 if same_paths else 1.0, 0.0),
        _check(
            "identity", "e0 expected conv (bitwise)", 0.0 if same_expected else 1.0, 0.0
        ),
        _check(
            "identity",
            "k=1 stochastic vs MLP",
            np.abs(forward(model, g, f, Mode.STOCHASTIC) - mlp).max(),
            IDENTITY_TOL,
        ),
        _check(
            "identity",
            "k=1 deterministic vs MLP",
            np.abs(forward(model, g, f, Mode.DETERMINISTIC) - mlp).max(),
            IDENTITY_TOL,
        ),
    ]


def stability(g: Graph, k: int = 5, p: int = 5, seed: int = 0) -> List[CheckResult]:
    """With `kernel_norm(s) <= 1` neither convolution increases the sup-norm."""
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(g.n, 3))
    s = _random_kernel(k, rng, c=3)
    bound = kernel_norm(s) * np.abs(f).max()
    paths = sample_paths(g, WalkConfig(k, p, seed))
    radius = spectral_radius_estimate(g, 50, seed)
    return [
        _check(
            "stability",
            "path conv sup-norm",
            np.abs(path_conv_forward(paths, f, s)).max() - bound,
            1e-12,
        ),
        _check(
            "stability",
            "expected conv sup-norm",
            np.abs(expected_conv(g, f, s)).max() - bound,
            1e-12,
        ),
        _check("stability", "spectral radius", radius, 1.0 + 1e-9),
    ]


def gradients(g: Graph, k: int = 3, p: int = 2, seed: int = 0) -> List[CheckResult]:
    """Check each layer's backward pass against central differences of the
    scalar `<forward(x), y>` for a random `y`."""
    rng = np.random.default_rng(seed)
    c, c_out = 3, 2
    f = rng.normal(size=(g.n, c))
    y = rng.normal(size=(g.n, c))
    s = rng.normal(size=(c, k))
    paths = sample_paths(g, WalkConfig(k, p, seed))
    w = DenseParam.glorot(c, c_out, "gcn", rng)
    w.bias[:] = rng.normal(size=c_out)
    y_out = rng.normal(size=(g.n, c_out))
    labels = rng.integers(0, c_out, g.n)
    nodes = np.arange(g.n)
    results: List[CheckResult] = []

    def add(name: str, analytic: Array, fn: Callable[[], float], x: Array) -> None:
        err = relative_error(analytic, central_difference(fn, x))
        results.append(_check("gradients", name, err, LAYER_GRAD_TOL))

    # Path convolution (linear in f and in s)
    def path_fn() -> float:
        return _inner(path_conv_forward(paths, f, s), y)

    def expected_fn() -> float:
        return _inner(expected_conv(g, f, s), y)

    gf, gs = path_conv_backward(paths, f, s, y)
    add("path conv / f", gf, path_fn, f)
    add("path conv / s", gs, path_fn, s)
    gf, gs = expected_conv_backward(g, f, s, y)
    add("expected conv / f", gf, expected_fn, f)
    add("expected conv / s", gs, expected_fn, s)
    # Shared kernel (k,) gradients sum over channels
    s1 = rng.normal(size=k)
    _, gs1 = path_conv_backward(paths, f, s1, y)

    def shared_fn() -> float:
        return _inner(path_conv_forward(paths, f, s1), y)

    add("path conv / shared s", gs1, shared_fn, s1)

    # 1×1 convolution
    def pointwise_fn() -> float:
        return _inner(pointwise_conv_forward(f, w), y_out)

    gf, gw, gb = pointwise_conv_backward(f, w, y_out)
    add("pointwise / f", gf, pointwise_fn, f)
    add("pointwise / W", gw, pointwise_fn, w.weights)
    add("pointwise / b", gb, pointwise_fn, w.bias)

    # ReLU, away from the kink at 0
    x = rng.normal(size=(g.n, c))
    x[np.abs(x) < 1e-3] = 0.5
    add("relu", relu_backward(x, y), lambda: _inner(relu_forward(x), y), x)

    # Dropout with a fixed mask is linear
    _, mask = dropout_forward(f, 0.5, seed)
    add("dropout", mask.apply(y), lambda: _inner(mask.apply(f), y), f)

    # Cross-entropy
    logits = rng.normal(size=(g.n, c_out))
    _, gl = masked_cross_entropy(logits, labels, nodes)

    def loss_fn() -> float:
        return masked_cross_entropy(logits, labels, nodes)[0]

    add("cross-entropy", gl, loss_fn, logits)
    return results


def end_to_end_graph(seed: int = 0) -> Graph:
    """The 12 node graph for the end-to-end gradient check: a ring with chords."""
    n = 12
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [(i, (i + 5) % n) for i in range(0, n, 3)]
    return graph_from_edge_list(edges, n)


def end_to_end(seed: int = 0) -> List[CheckResult]:
    """Gradients of the loss of a small network (c=4, L=2, k=3, p=2) against
    central differences, on fixed paths in stochastic mode and in deterministic
    mode."""
    g = end_to_end_graph(seed)
    rng = np.random.default_rng(seed)
    c_in, c_out = 5, 3
    x = rng.normal(size=(g.n, c_in))
    labels = rng.integers(0, c_out, g.n)
    nodes = np.arange(g.n)
    results: List[CheckResult] = []
    for variant in ("global", "per-layer", "depthwise"):
        cfg = ModelConfig(
            L=2, c=4, k=3, p=2, p_drop=0.0, variant=variant, seed=seed  # type: ignore
        )
        model = PathGCNModel.build(cfg, c_in, c_out)
        paths = [resample(g, cfg.walk, l) for l in range(cfg.L)]
        for mode in (Mode.STOCHASTIC, Mode.DETERMINISTIC):
            fixed = paths if mode == Mode.STOCHASTIC else None
            _, grads, _ = loss_and_grads(
                model, g, x, labels, nodes, mode, paths=fixed
            )

            def loss() -> float:
                return loss_and_grads(model, g, x, labels, nodes, mode, paths=fixed)[0]

            params = model.parameters()
            analytic = np.concatenate([grads[name].ravel() for name in params])
            numeric = np.concatenate(
                [central_difference(loss, t).ravel() for t in params.values()]
            )
            err = relative_error(analytic, numeric)
            name = f"{variant} {mode}"
            results.append(_check("end-to-end", name, err, MODEL_GRAD_TOL))
    return results


SUITES: Dict[str, Callable[..., List[CheckResult]]] = {
    "convergence": convergence,
    "exhaustive": exhaustive,
    "adjoint": adjoint,
    "identity": identity,
    "stability": stability,
    "gradients": gradients,
    "end-to-end": end_to_end,
}
# Suites which take the graph under test as their first argument
GRAPH_SUITES = ("convergence", "adjoint", "identity", "stability", "gradients")


def run_suites(
    g: Graph, names: Sequence[str] = (), seed: int = 0
) -> List[CheckResult]:
    """Run the named suites (all if `names` is empty) against `g`."""
    names = list(names) or list(SUITES)
    unknown = set(names) - set(SUITES)
    if unknown:
        bad = sorted(unknown)
        raise ValueError(f"Unknown suites {bad}: choose from {list(SUITES)}.")
    results: List[CheckResult] = []
    for name in names:
        log.action(f"Running '{name}' checks...")
        suite = SUITES[name]
        results += suite(g, seed=seed) if name in GRAPH_SUITES else suite(seed=seed)
    return results


def results_table(results: Sequence[CheckResult]) -> TableTuple:
    return TableTuple(
        "Verification",
        "{:<12} {:<30} {:>12.4e} {:>8.0e} {:>6}",
        "suite check value limit result",
        [(*r[:4], "pass" if r.passed else "FAIL") for r in results],
    )


def check_results(results: Sequence[CheckResult]) -> None:
    """Raise `VerificationError` naming the failed checks, if any."""
    failed = [f"{r.suite}/{r.name}" for r in results if not r.passed]
    if failed:
        raise VerificationError(f"{len(failed)} checks failed: {', '.join(failed)}.")
