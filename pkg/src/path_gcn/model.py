# MIT License
"""The pathGCN node classifier: configuration, forward and backward passes,
training with early stopping, evaluation and timing.

The network is:

    dropout -> embedding 1×1 -> ReLU
      -> L × [path convolution -> 1×1 -> ReLU]
      -> dropout -> classifier 1×1

In stochastic mode each block convolves over a fresh set of sampled walks; in
deterministic mode it uses the expectation of the convolution over all walks.
"""

from __future__ import annotations

import copy
import enum
import itertools
import json
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    get_type_hints,
)

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import logger
from .argtypes import IntArg
from .data_table import TableTuple, write_csv
from .graph import FeatureMatrix, Graph, ShapeError
from .nn import (
    AdamState,
    DenseParam,
    DropoutMask,
    Group,
    NonFiniteError,
    accuracy,
    adam_step,
    dropout_forward,
    masked_cross_entropy,
    pointwise_conv_backward,
    pointwise_conv_forward,
    relu_backward,
    relu_forward,
)
from .pathconv import (
    KernelVariant,
    SpatialKernel,
    check_features,
    cost_model,
    expected_conv,
    expected_conv_backward,
    path_conv_backward,
    path_conv_forward,
    walk_powers,
)
from .paths import PathSet, WalkConfig, resample, stream_seed
from .progress_bar import ProgressBar

log = logger.getLogger(__name__)

Array = NDArray[np.float64]

# Independent random streams derived from the config seed
INIT_STREAM = 1
DROPOUT_STREAM = 2
EVAL_STREAM = 3


class TrainingError(Exception):
    "Raised if training diverges."

    def __init__(self, msg: str, epoch: int) -> None:
        super().__init__(f"Epoch {epoch}: {msg}")
        self.epoch = epoch


class Mode(str, enum.Enum):
    """How the path convolutions are computed."""

    STOCHASTIC = "stochastic"  # Over sampled walks
    DETERMINISTIC = "deterministic"  # Expectation over all walks

    def __str__(self) -> str:
        return self.value


@dataclass
class ModelConfig:
    """All the hyperparameters of a model and its training run."""

    L: int = 2  # Number of pathGCN blocks
    c: int = 64  # Hidden channels
    k: int = 5  # Nodes per walk, including the origin
    p: int = 5  # Walks per node
    p_drop: float = 0.6
    variant: KernelVariant = KernelVariant.DEPTHWISE
    lr_gcn: float = 1e-3
    wd_gcn: float = 2e-5
    lr_oc: float = 1e-2
    wd_oc: float = 1e-5
    max_epochs: int = 1500
    patience: int = 100
    seed: int = 0
    inference_mode: Mode = Mode.DETERMINISTIC
    train_mode: Mode = Mode.STOCHASTIC
    workers: int = 1  # Threads for path sampling and split fan-out

    def __post_init__(self) -> None:
        self.variant = KernelVariant(self.variant)
        self.inference_mode = Mode(self.inference_mode)
        self.train_mode = Mode(self.train_mode)
        for names, least in (
            (("c", "k", "p", "max_epochs", "workers"), 1),
            (("L", "patience", "seed", "lr_gcn", "lr_oc", "wd_gcn", "wd_oc"), 0),
        ):
            for name in names:
                if (value := getattr(self, name)) < least:
                    raise ValueError(f"Config: {name} must be >= {least} ({value}).")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"Config: p_drop must be in [0, 1) ({self.p_drop}).")

    @property
    def lr_by_group(self) -> Dict[str, float]:
        return {"gcn": self.lr_gcn, "oc": self.lr_oc}

    @property
    def wd_by_group(self) -> Dict[str, float]:
        return {"gcn": self.wd_gcn, "oc": self.wd_oc}

    @property
    def walk(self) -> WalkConfig:
        return WalkConfig(self.k, self.p, self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            k: str(v) if isinstance(v, enum.Enum) else v
            for k, v in asdict(self).items()
        }

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> ModelConfig:
        unknown = set(d) - {f.name for f in fields(ModelConfig)}
        if unknown:
            raise ValueError(f"Config: unknown fields {sorted(unknown)}.")
        return ModelConfig(**d)

    def with_overrides(self, overrides: Mapping[str, Any]) -> ModelConfig:
        """Return a copy with fields replaced. String values (eg. from the
        command line) are converted to the type of the field."""
        types = get_type_hints(ModelConfig)
        values = self.to_dict()
        for name, value in overrides.items():
            if name not in types:
                raise ValueError(f"Config: unknown field '{name}'.")
            if isinstance(value, str) and types[name] in (int, float):
                value = int(IntArg(value)) if types[name] is int else float(value)
            values[name] = value
        return ModelConfig.from_dict(values)


@dataclass
class Split:
    """Disjoint train, validation and test node sets."""

    train: NDArray[np.int64]
    val: NDArray[np.int64]
    test: NDArray[np.int64]

    def __post_init__(self) -> None:
        self.train, self.val, self.test = (
            np.asarray(s, dtype=np.int64).ravel()
            for s in (self.train, self.val, self.test)
        )
        a, b, c = (set(s.tolist()) for s in (self.train, self.val, self.test))
        if len(a) + len(b) + len(c) != len(a | b | c):
            raise ValueError("Split: train, val and test sets must be disjoint.")

    def check(self, n: int) -> None:
        for name in ("train", "val", "test"):
            s = getattr(self, name)
            if len(s) and (s.min() < 0 or s.max() >= n):
                raise ValueError(f"Split: {name} node index out of range [0, {n}).")

    def to_dict(self) -> Dict[str, List[int]]:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}


class PathGCNModel:
    """The parameters of a pathGCN node classifier."""

    def __init__(
        self,
        cfg: ModelConfig,
        c_in: int,
        c_out: int,
        embedding: DenseParam,
        kernel: SpatialKernel,
        blocks: Sequence[DenseParam],
        classifier: DenseParam,
    ) -> None:
        self.cfg = cfg
        self.c_in, self.c_out = c_in, c_out
        self.embedding = embedding
        self.kernel = kernel
        self.blocks = list(blocks)
        self.classifier = classifier
        if len(self.blocks) != cfg.L:
            raise ShapeError(f"Model has {len(self.blocks)} blocks, not L={cfg.L}.")
        widths = [embedding.cols] + [w for b in self.blocks for w in (b.rows, b.cols)]
        if (embedding.rows, widths, classifier.rows, classifier.cols) != (
            c_in, [cfg.c] * (2 * cfg.L + 1), cfg.c, c_out
        ):  # fmt: skip
            raise ShapeError("Model layer widths do not chain c_in -> c -> c_out.")

    @staticmethod
    def build(cfg: ModelConfig, c_in: int, c_out: int) -> PathGCNModel:
        """Return a freshly initialised model (seeded by `cfg.seed`)."""
        rng = np.random.default_rng(stream_seed(cfg.seed, INIT_STREAM))
        embedding = DenseParam.glorot(c_in, cfg.c, "oc", rng)
        kernel = SpatialKernel.initialize(cfg.variant, cfg.L, cfg.c, cfg.k, rng)
        blocks = [DenseParam.glorot(cfg.c, cfg.c, "gcn", rng) for _ in range(cfg.L)]
        classifier = DenseParam.glorot(cfg.c, c_out, "oc", rng)
        return PathGCNModel(cfg, c_in, c_out, embedding, kernel, blocks, classifier)

    def __repr__(self) -> str:
        return (
            f"PathGCNModel({self.c_in} -> {self.cfg.c} x L={self.cfg.L} -> "
            f"{self.c_out}, {self.kernel})"
        )

    def _dense(self) -> List[Tuple[str, DenseParam]]:
        return [
            ("embedding", self.embedding),
            *((f"block{l}", b) for l, b in enumerate(self.blocks)),
            ("classifier", self.classifier),
        ]

    def parameters(self) -> Dict[str, Array]:
        """The parameter arrays by name (the arrays themselves, not copies)."""
        params = {"kernel": self.kernel.weights}
        for name, d in self._dense():
            params[f"{name}.weights"] = d.weights
            params[f"{name}.bias"] = d.bias
        return params

    def groups(self) -> Dict[str, Group]:
        groups: Dict[str, Group] = {"kernel": "gcn"}
        for name, d in self._dense():
            groups[f"{name}.weights"] = groups[f"{name}.bias"] = d.group
        return groups

    def state(self) -> Dict[str, Array]:
        """A copy of all the parameter values."""
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state(self, state: Mapping[str, Array]) -> None:
        """Copy parameter values from `state` (as returned by `state()`)."""
        params = self.parameters()
        if set(state) != set(params):
            raise ShapeError(f"State parameters {sorted(state)} != {sorted(params)}.")
        for name, value in state.items():
            if params[name].shape != np.shape(value):
                raise ShapeError(f"Parameter '{name}' has shape {np.shape(value)}.")
            params[name][...] = value

    def copy(self) -> PathGCNModel:
        return copy.deepcopy(self)


class LayerTrace(NamedTuple):
    """What the backward pass needs from the forward pass of one block."""

    h: FeatureMatrix  # Block input
    conv: FeatureMatrix  # Path convolution output
    z: FeatureMatrix  # 1×1 output (pre-activation)
    paths: Optional[PathSet]  # Walks used (stochastic mode)
    powers: Optional[List[FeatureMatrix]]  # Walk powers of h (deterministic mode)


@dataclass
class Trace:
    x_in: FeatureMatrix = field(repr=False)
    mask_in: DropoutMask = field(repr=False)
    z0: FeatureMatrix = field(repr=False)
    layers: List[LayerTrace] = field(repr=False)
    h_out: FeatureMatrix = field(repr=False)
    mask_out: DropoutMask = field(repr=False)
    mode: Mode = Mode.DETERMINISTIC


def _check_finite(f: FeatureMatrix, where: str) -> FeatureMatrix:
    if not np.all(np.isfinite(f)):
        raise NonFiniteError(f"Non-finite activations in {where}.", where)
    return f


def run_forward(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    mode: Mode | str | None = None,
    iteration: int = 0,
    training: bool = False,
    paths: Sequence[PathSet] | None = None,
    walk: WalkConfig | None = None,
) -> Tuple[FeatureMatrix, Trace]:
    """Return the logits and the trace for `backward()`.

    In stochastic mode block `l` uses `paths[l]` if given, otherwise the walks
    for `iteration * L + l` of the stream seeded by `walk` (default
    `cfg.walk`). Dropout is only applied when `training`."""
    cfg = model.cfg
    mode = Mode(mode or (Mode.STOCHASTIC if paths is not None else cfg.inference_mode))
    x = check_features(x, g.n)
    if x.shape[1] != model.c_in:
        raise ShapeError(f"Features have {x.shape[1]} channels, not {model.c_in}.")
    if paths is not None and len(paths) != cfg.L:
        raise ShapeError(f"Got {len(paths)} path sets for L={cfg.L} blocks.")
    walk = walk or cfg.walk
    drop = [stream_seed(cfg.seed, DROPOUT_STREAM, iteration, i) for i in (0, 1)]
    x_in, mask_in = dropout_forward(x, cfg.p_drop, drop[0], training)
    z0 = pointwise_conv_forward(x_in, model.embedding)
    h = _check_finite(relu_forward(z0), "embedding")
    layers: List[LayerTrace] = []
    for l, block in enumerate(model.blocks):
        s = model.kernel.layer(l)
        ps: PathSet | None = None
        powers: List[FeatureMatrix] | None = None
        if mode == Mode.STOCHASTIC:
            ps = paths[l] if paths is not None else resample(
                g, walk, iteration * cfg.L + l, cfg.workers
            )
            conv = path_conv_forward(ps, h, s)
        else:
            powers = walk_powers(g, h, cfg.k)
            conv = expected_conv(g, h, s, powers)
        z = pointwise_conv_forward(conv, block)
        layers.append(LayerTrace(h, conv, z, ps, powers))
        h = _check_finite(relu_forward(z), f"layer {l}")
    h_out, mask_out = dropout_forward(h, cfg.p_drop, drop[1], training)
    logits = pointwise_conv_forward(h_out, model.classifier)
    _check_finite(logits, "classifier")
    return logits, Trace(x_in, mask_in, z0, layers, h_out, mask_out, mode)


def forward(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    mode: Mode | str | None = None,
    iteration: int = 0,
    training: bool = False,
    paths: Sequence[PathSet] | None = None,
) -> FeatureMatrix:
    """Return the logits of `model` for every node of `g`."""
    return run_forward(model, g, x, mode, iteration, training, paths)[0]


def backward(
    model: PathGCNModel, g: Graph, trace: Trace, grad_logits: ArrayLike
) -> Dict[str, Array]:
    """Return the gradients of all parameters (named as `parameters()`)."""
    grads: Dict[str, Array] = {}
    grad_kernel = np.zeros_like(model.kernel.weights)
    grad_h, gw, gb = pointwise_conv_backward(trace.h_out, model.classifier, grad_logits)
    grads["classifier.weights"], grads["classifier.bias"] = gw, gb
    grad_h = trace.mask_out.apply(grad_h)
    for l in reversed(range(len(model.blocks))):
        t = trace.layers[l]
        grad_z = relu_backward(t.z, grad_h)
        grad_conv, gw, gb = pointwise_conv_backward(t.conv, model.blocks[l], grad_z)
        grads[f"block{l}.weights"], grads[f"block{l}.bias"] = gw, gb
        s = model.kernel.layer(l)
        if t.paths is not None:
            grad_h, grad_s = path_conv_backward(t.paths, t.h, s, grad_conv)
        else:
            grad_h, grad_s = expected_conv_backward(g, t.h, s, grad_conv, t.powers)
        model.kernel.accumulate(grad_kernel, l, grad_s)
    grad_z0 = relu_backward(trace.z0, grad_h)
    _, gw, gb = pointwise_conv_backward(trace.x_in, model.embedding, grad_z0)
    grads["embedding.weights"], grads["embedding.bias"] = gw, gb
    grads["kernel"] = grad_kernel
    return grads


def loss_and_grads(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    labels: ArrayLike,
    nodes: ArrayLike,
    mode: Mode | str | None = None,
    iteration: int = 0,
    training: bool = False,
    paths: Sequence[PathSet] | None = None,
) -> Tuple[float, Dict[str, Array], FeatureMatrix]:
    """Return the cross-entropy over `nodes`, the parameter gradients and the
    logits."""
    logits, trace = run_forward(model, g, x, mode, iteration, training, paths)
    loss, grad_logits = masked_cross_entropy(logits, labels, nodes)
    return loss, backward(model, g, trace, grad_logits), logits


class EpochRecord(NamedTuple):
    epoch: int
    loss: float
    val_acc: float
    val_loss: float


@dataclass
class TrainingReport:
    """The per-epoch history of a training run and its outcome."""

    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    best_val_loss: float = float("inf")
    test_acc: float = 0.0
    test_std: float = 0.0
    stopped_early: bool = False
    best_state: Dict[str, Array] = field(default_factory=dict, repr=False)
    train_seconds: float = 0.0

    def table(self) -> TableTuple:
        return TableTuple(
            "Training history",
            "{:>5} {:>10.4f} {:>7.4f} {:>8.4f}",
            "epoch loss val_acc val_loss",
            self.epochs,
        )

    def summary(self, cfg: ModelConfig) -> Dict[str, Any]:
        """The deterministic outcome of the run (no timings)."""
        return {
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "best_val_loss": self.best_val_loss,
            "epochs": len(self.epochs),
            "stopped_early": self.stopped_early,
            "test_accuracy": self.test_acc,
            "test_std": self.test_std,
            "config": cfg.to_dict(),
        }

    def write(self, outdir: Path | str, cfg: ModelConfig) -> Path:
        """Write `report.csv`, `summary.json` and `timing.json` to `outdir`."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_csv(self.table(), outdir / "report.csv")
        write_json(self.summary(cfg), outdir / "summary.json")
        timing = {"train_seconds": self.train_seconds, "epochs": len(self.epochs)}
        write_json(timing, outdir / "timing.json")
        return outdir


def write_json(data: Any, path: Path | str) -> Path:
    """Write `data` as indented JSON with sorted keys (byte-stable)."""
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def train(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    labels: ArrayLike,
    split: Split,
    cfg: ModelConfig | None = None,
) -> TrainingReport:
    """Train `model` with full-batch Adam steps and early stopping.

    Each epoch is one optimizer step on the training nodes (with fresh walks in
    stochastic training). The validation pass is deterministic. Training stops
    after `cfg.patience` epochs without a better validation accuracy (or equal
    accuracy with lower loss), and the best parameters are restored."""
    if cfg is not None and cfg != model.cfg:
        raise ValueError("Training config differs from the model's config.")
    cfg = model.cfg
    split.check(g.n)
    x = check_features(x, g.n)
    labels = np.asarray(labels)
    state = AdamState()
    report = TrainingReport()
    params, groups = model.parameters(), model.groups()
    since_best = 0
    log.action(
        f"Training {model} for up to {cfg.max_epochs} epochs "
        f"({cfg.train_mode} paths, k={cfg.k}, p={cfg.p})."
    )
    start = time.perf_counter()
    with ProgressBar(cfg.max_epochs, "Training") as bar:
        for epoch in range(cfg.max_epochs):
            try:
                loss, grads, _ = loss_and_grads(
                    model, g, x, labels, split.train, cfg.train_mode, epoch, True
                )
                if not np.isfinite(loss):
                    raise NonFiniteError(f"Training loss diverged ({loss}).")
                adam_step(
                    params, grads, groups, state, cfg.lr_by_group, cfg.wd_by_group
                )
                logits = forward(model, g, x, Mode.DETERMINISTIC)
                val_loss, _ = masked_cross_entropy(logits, labels, split.val)
            except NonFiniteError as err:
                raise TrainingError(str(err), epoch) from err
            val_acc = accuracy(logits, labels, split.val)
            report.epochs.append(EpochRecord(epoch, loss, val_acc, val_loss))
            log.debug(f"Epoch {epoch}: loss={loss:.4f} val_acc={val_acc:.4f}")
            bar.update(epoch + 1, loss=loss, val_acc=val_acc)
            if val_acc > report.best_val_acc or report.best_epoch < 0 or (
                val_acc == report.best_val_acc and val_loss < report.best_val_loss
            ):
                report.best_epoch, since_best = epoch, 0
                report.best_val_acc, report.best_val_loss = val_acc, val_loss
                report.best_state = model.state()
            else:
                since_best += 1
                if since_best > cfg.patience:
                    report.stopped_early = True
                    log.warning(f"No improvement in {since_best} epochs: stopping.")
                    break
    report.train_seconds = time.perf_counter() - start
    model.load_state(report.best_state)
    report.test_acc, report.test_std = evaluate(
        model, g, x, labels, split.test, cfg.inference_mode, repeats=10
    )
    log.info(
        f"Best epoch {report.best_epoch}: val_acc={report.best_val_acc:.4f}, "
        f"test_acc={report.test_acc:.4f}."
    )
    return report


def evaluate(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    labels: ArrayLike,
    nodes: ArrayLike,
    mode: Mode | str = Mode.DETERMINISTIC,
    repeats: int = 10,
) -> Tuple[float, float]:
    """Return the mean and standard deviation of the accuracy over `nodes`.
    Deterministic mode is a single pass (std 0); stochastic mode averages
    `repeats` passes, each with fresh walks."""
    if len(np.asarray(nodes)) == 0:
        raise ValueError("Evaluate: empty node set.")
    if Mode(mode) == Mode.DETERMINISTIC:
        return accuracy(forward(model, g, x, Mode.DETERMINISTIC), labels, nodes), 0.0
    cfg = model.cfg
    walk = WalkConfig(cfg.k, cfg.p, stream_seed(cfg.seed, EVAL_STREAM))
    accs = [
        accuracy(
            run_forward(model, g, x, Mode.STOCHASTIC, r, walk=walk)[0], labels, nodes
        )
        for r in range(repeats)
    ]
    return float(np.mean(accs)), float(np.std(accs))


@dataclass
class TimingReport:
    """Median wall-clock times (ms) of each phase, and the operation counts of
    one path convolution."""

    sampling_ms: float
    train_step_ms: float
    inference_deterministic_ms: float
    inference_stochastic_ms: float
    repetitions: int
    stochastic_ops: int = 0
    deterministic_ops: int = 0

    def table(self) -> TableTuple:
        return TableTuple(
            "Timings (median ms)",
            "{:<28} {:>12}",
            "phase value",
            [
                ("path sampling", f"{self.sampling_ms:.3f}"),
                ("training step", f"{self.train_step_ms:.3f}"),
                ("inference (deterministic)", f"{self.inference_deterministic_ms:.3f}"),
                ("inference (stochastic)", f"{self.inference_stochastic_ms:.3f}"),
                ("ops per conv (stochastic)", f"{self.stochastic_ops}"),
                ("ops per conv (deterministic)", f"{self.deterministic_ops}"),
            ],
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _median_ms(fn: Callable[[], Any], repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(1000.0 * (time.perf_counter() - start))
    return statistics.median(times)


def benchmark(
    model: PathGCNModel,
    g: Graph,
    x: ArrayLike,
    cfg: ModelConfig | None = None,
    repetitions: int = 20,
    labels: ArrayLike | None = None,
) -> TimingReport:
    """Time path sampling (one draw per block), one training step and one
    inference pass in each mode. The model itself is not changed."""
    if cfg is not None and cfg != model.cfg:
        raise ValueError("Benchmark config differs from the model's config.")
    cfg = model.cfg
    x = check_features(x, g.n)
    labels = np.zeros(g.n, dtype=np.int64) if labels is None else np.asarray(labels)
    nodes = np.arange(g.n)
    bench = model.copy()
    params, groups, state = bench.parameters(), bench.groups(), AdamState()
    step = itertools.count()

    def sample() -> None:
        for l in range(cfg.L):
            resample(g, cfg.walk, l, cfg.workers)

    def train_step() -> None:
        _, grads, _ = loss_and_grads(
            bench, g, x, labels, nodes, cfg.train_mode, next(step), training=True
        )
        adam_step(params, grads, groups, state, cfg.lr_by_group, cfg.wd_by_group)

    train_step()  # Warm up caches
    timings = TimingReport(
        sampling_ms=_median_ms(sample, repetitions),
        train_step_ms=_median_ms(train_step, repetitions),
        inference_deterministic_ms=_median_ms(
            lambda: forward(bench, g, x, Mode.DETERMINISTIC), repetitions
        ),
        inference_stochastic_ms=_median_ms(
            lambda: forward(bench, g, x, Mode.STOCHASTIC, next(step)), repetitions
        ),
        repetitions=repetitions,
        **cost_model(g, cfg.k, cfg.p),
    )
    log.debug(f"Benchmark: {timings}")
    return timings
