# MIT License
"""A minimal set of dense layers with exact gradients, and the Adam optimizer
with per-group learning rates and weight decay.

Each layer is a pair of functions: `*_forward()` returns the activation and
`*_backward()` takes the forward inputs and the gradient of the loss with
respect to the output, and returns the gradients with respect to the inputs and
parameters. Parameters belong to one of two groups: `"gcn"` for the path
convolution blocks and `"oc"` for the opening (embedding) and closing
(classifier) layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from typing_extensions import Literal, TypeAlias

from . import logger
from .graph import FLOAT, FeatureMatrix, ShapeError

log = logger.getLogger(__name__)

Group: TypeAlias = Literal["gcn", "oc"]
GROUPS: Tuple[Group, ...] = ("gcn", "oc")
Array: TypeAlias = NDArray[np.float64]


class NonFiniteError(ArithmeticError):
    "Raised when a NaN or infinity turns up in a gradient, loss or activation."

    def __init__(self, msg: str, name: str = "") -> None:
        super().__init__(msg)
        self.name = name


class DenseParam:
    """The weights `(rows, cols)` and bias `(cols,)` of a 1×1 convolution."""

    weights: Array
    bias: Array

    def __init__(
        self,
        rows: int,
        cols: int,
        group: Group,
        weights: ArrayLike | None = None,
        bias: ArrayLike | None = None,
    ) -> None:
        if group not in GROUPS:
            raise ValueError(f"Unknown parameter group '{group}'.")
        self._group = group
        weights = np.zeros((rows, cols)) if weights is None else weights
        self.weights = np.array(weights, FLOAT)
        self.bias = np.array(np.zeros(cols) if bias is None else bias, FLOAT)
        if self.weights.shape != (rows, cols) or self.bias.shape != (cols,):
            raise ShapeError(
                f"Dense parameter shapes {self.weights.shape}, {self.bias.shape} "
                f"do not match ({rows}, {cols})."
            )

    @property
    def group(self) -> Group:
        "The group is fixed when the parameter is made."
        return self._group

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def __repr__(self) -> str:
        return f"DenseParam({self.rows}, {self.cols}, group={self.group!r})"

    @staticmethod
    def glorot(
        rows: int, cols: int, group: Group, rng: np.random.Generator
    ) -> DenseParam:
        """Weights uniform in ±sqrt(6 / (rows + cols)), zero bias."""
        limit = np.sqrt(6.0 / (rows + cols))
        return DenseParam(rows, cols, group, rng.uniform(-limit, limit, (rows, cols)))


def pointwise_conv_forward(f: ArrayLike, w: DenseParam) -> FeatureMatrix:
    """Return `f @ W + bias`: the same channel mixing at every node."""
    f = np.asarray(f, dtype=FLOAT)
    if f.ndim != 2 or f.shape[1] != w.rows:
        raise ShapeError(f"Features {f.shape} do not match {w}.")
    return f @ w.weights + w.bias


def pointwise_conv_backward(
    f: ArrayLike, w: DenseParam, grad_out: ArrayLike
) -> Tuple[FeatureMatrix, Array, Array]:
    """Return `(grad_f, grad_W, grad_bias)`."""
    f = np.asarray(f, dtype=FLOAT)
    grad_out = np.asarray(grad_out, dtype=FLOAT)
    if grad_out.shape != (f.shape[0], w.cols):
        raise ShapeError(f"Gradient {grad_out.shape} does not match output of {w}.")
    return grad_out @ w.weights.T, f.T @ grad_out, grad_out.sum(axis=0)


def relu_forward(x: ArrayLike) -> FeatureMatrix:
    return np.maximum(np.asarray(x, dtype=FLOAT), 0.0)


def relu_backward(x: ArrayLike, grad_out: ArrayLike) -> FeatureMatrix:
    """The gradient is passed where `x > 0` (the subgradient at 0 is 0)."""
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


@dataclass(frozen=True)
class DropoutMask:
    """The scaled keep mask of an inverted dropout: entries are 0 or
    `1 / (1 - p_drop)`. `mask` is None when dropout is the identity."""

    p_drop: float
    mask: Array | None = None

    @property
    def keep_prob(self) -> float:
        return 1.0 - self.p_drop

    def apply(self, grad: ArrayLike) -> FeatureMatrix:
        """Apply the mask to a gradient (or activation) of the same shape."""
        grad = np.asarray(grad, dtype=FLOAT)
        return grad if self.mask is None else grad * self.mask


def dropout_forward(
    f: ArrayLike, p_drop: float, seed: int, training: bool = True
) -> Tuple[FeatureMatrix, DropoutMask]:
    """Inverted dropout: zero each entry with probability `p_drop` and scale
    the rest by `1 / (1 - p_drop)`. The identity when not `training`."""
    f = np.asarray(f, dtype=FLOAT)
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"Dropout probability must be in [0, 1): {p_drop}.")
    if not training or p_drop == 0.0:
        return f, DropoutMask(p_drop)
    rng = np.random.default_rng(seed)
    mask = (rng.random(f.shape) >= p_drop) * (1.0 / (1.0 - p_drop))
    return f * mask, DropoutMask(p_drop, mask)


def masked_cross_entropy(
    logits: ArrayLike, labels: ArrayLike, mask: ArrayLike
) -> Tuple[float, FeatureMatrix]:
    """Return the mean softmax cross-entropy over the nodes in `mask` and its
    gradient with respect to `logits` (zero outside the mask)."""
    logits = np.asarray(logits, dtype=FLOAT)
    labels = np.asarray(labels)
    nodes = np.asarray(mask, dtype=np.int64).ravel()
    if len(nodes) == 0:
        raise ValueError("Cross-entropy over an empty node mask.")
    z = logits[nodes]
    target = labels[nodes]
    if target.min() < 0 or target.max() >= logits.shape[1]:
        raise ValueError(f"Labels must be class indices in [0, {logits.shape[1]}).")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(nodes))
    loss = float(np.mean(log_norm - z[rows, target]))
    softmax = np.exp(z - log_norm[:, None])
    softmax[rows, target] -= 1.0
    grad = np.zeros_like(logits)
    np.add.at(grad, nodes, softmax / len(nodes))
    return loss, grad


def accuracy(logits: ArrayLike, labels: ArrayLike, nodes: ArrayLike) -> float:
    """Fraction of `nodes` whose highest logit is their label."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("Accuracy over an empty node set.")
    predicted = np.argmax(np.asarray(logits)[nodes], axis=1)
    return float(np.mean(predicted == np.asarray(labels)[nodes]))


@dataclass
class AdamState:
    """First and second moments for each named parameter and the step count."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, Array] = field(default_factory=dict)
    v: Dict[str, Array] = field(default_factory=dict)


def adam_step(
    params: MutableMapping[str, Array],
    grads: Mapping[str, Array],
    groups: Mapping[str, Group],
    state: AdamState,
    lr_by_group: Mapping[str, float],
    wd_by_group: Mapping[str, float],
) -> MutableMapping[str, Array]:
    """Take one Adam step, updating the arrays in `params` in place.

    Weight decay is added to the gradient (`g + wd * theta`) before the moment
    updates, and each parameter uses the learning rate and weight decay of its
    group. Raises `NonFiniteError` naming the first parameter with a NaN or
    infinite gradient, moment or update, before any parameter or moment is
    changed."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient for parameter '{name}'.", name)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    updates: Dict[str, Tuple[Array, Array, Array]] = {}
    for name, theta in params.items():
        group = groups[name]
        lr, wd = lr_by_group[group], wd_by_group[group]
        g = grads[name] + wd * theta
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g  # May overflow
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(new))):
            msg = f"Non-finite Adam update for parameter '{name}'."
            raise NonFiniteError(msg, name)
        updates[name] = (m, v, new)
    state.step = t
    for name, (m, v, new) in updates.items():
        state.m[name], state.v[name] = m, v
        params[name][...] = new
    return params
