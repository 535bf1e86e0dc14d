"""Minimal dense-network math: parameters, forward inference, exact
backpropagation, SGD, tempered softmax, cross-entropy, KL divergence and a
finite-difference gradient oracle.

Everything is float64 and purely functional: operations take value inputs
and return new values, so they are safe to call from concurrent contexts.
Losses are expressed as ``LossHead`` objects attached to individual inputs;
``backward`` averages the exact analytic gradient of those heads over a
batch, which is the single gradient path used by every training loop in
the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# Probability floor applied before any log; keeps losses finite when a
# model collapses a class probability to zero.
PROB_FLOOR = 1e-12

_ACTIVATIONS: dict[str, tuple[Callable[[Array], Array], Callable[[Array], Array]]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "identity": (lambda z: z, np.ones_like),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense network.

    ``layer_widths`` runs input dim ... output dim (the number of classes
    for classifiers); ``activation`` names the hidden nonlinearity. The
    output layer is always linear so the network emits raw logits.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("a spec needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"choose one of {sorted(_ACTIVATIONS)}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def param_count(self) -> int:
        widths = self.layer_widths
        return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))


@dataclass
class ModelParams:
    """Per-layer weight matrices and bias vectors instantiating a spec.

    ``weights[l]`` has shape (out_l, in_l) and ``biases[l]`` shape (out_l,).
    Shape congruence with the spec is checked on construction; finiteness is
    checked at trust boundaries via :meth:`validate` (not on the SGD hot
    path).
    """

    spec: ModelSpec
    weights: list[Array]
    biases: list[Array]

    def __post_init__(self) -> None:
        widths = self.spec.layer_widths
        expect = [(widths[i + 1], widths[i]) for i in range(self.spec.n_layers)]
        got_w = [w.shape for w in self.weights]
        got_b = [b.shape for b in self.biases]
        if got_w != expect or got_b != [(o,) for o, _ in expect]:
            raise ValueError(
                f"parameter shapes {got_w}/{got_b} do not match spec {widths}"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def validate(self) -> None:
        for arr in (*self.weights, *self.biases):
            if not np.isfinite(arr).all():
                raise ValueError("non-finite parameter values")


@dataclass
class GradientSet:
    """Gradient of a scalar loss w.r.t. every parameter of one model."""

    weights: list[Array]
    biases: list[Array]


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bitwise equality of two parameter sets (specs included)."""
    return (
        a.spec == b.spec
        and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Deterministic init: all values uniform in +-sqrt(6/(fan_in+fan_out)).

    Biases draw from the same bounded symmetric distribution as weights;
    exactly-zero biases would let a fully dead ReLU layer collapse the whole
    network onto the activation kink.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-limit, limit, size=fan_out))
    params = ModelParams(spec, weights, biases)
    params.validate()
    return params


def _activation(spec: ModelSpec) -> tuple[Callable[[Array], Array], Callable[[Array], Array]]:
    return _ACTIVATIONS[spec.activation]


def forward_batch(params: ModelParams, X: Array) -> Array:
    """Logits for a (batch, input_dim) matrix of inputs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"expected inputs of shape (batch, {params.spec.input_dim}), got {X.shape}"
        )
    act, _ = _activation(params.spec)
    A = X
    last = params.spec.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        Z = A @ W.T + b
        A = Z if l == last else act(Z)
    return A


def forward(params: ModelParams, x: Array) -> Array:
    """Logits for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d input vector, got shape {x.shape}")
    return forward_batch(params, x[None, :])[0]


def softmax_temperature(logits: Array, T: float) -> Array:
    """Tempered softmax of logits/T, max-subtracted for stability; T=1 is plain softmax."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: Array, T: float = 1.0) -> Array:
    """Row-wise tempered softmax for a (batch, classes) logits matrix."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(pred: Array, label: int) -> float:
    """-log of the predicted probability of the true class, floored at PROB_FLOOR."""
    pred = np.asarray(pred, dtype=np.float64)
    label = int(label)
    if not 0 <= label < pred.shape[0]:
        raise ValueError(f"label {label} out of range for {pred.shape[0]} classes")
    return float(-np.log(max(pred[label], PROB_FLOOR)))


def kl_divergence(p: Array, q: Array) -> float:
    """sum_i p_i log(p_i/q_i) with q floored at PROB_FLOOR; p_i = 0 terms contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    q = np.maximum(q, PROB_FLOOR)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


# ---------------------------------------------------------------------------
# Loss heads: differentiable scalar losses applied to a network's raw logits.
# A training example is an (input, head) pair; composed objectives are built
# from Scaled/Sum combinators so the analytic gradient stays exact.
# ---------------------------------------------------------------------------


class LossHead:
    """Scalar loss on raw logits with its exact gradient."""

    def value(self, logits: Array) -> float:
        raise NotImplementedError

    def grad(self, logits: Array) -> Array:
        raise NotImplementedError


class CrossEntropyHead(LossHead):
    """Softmax cross-entropy against an integer class label."""

    __slots__ = ("label",)

    def __init__(self, label: int):
        self.label = int(label)

    def value(self, logits: Array) -> float:
        return cross_entropy(softmax_temperature(logits, 1.0), self.label)

    def grad(self, logits: Array) -> Array:
        # d/dz of -log softmax(z)[y]; the PROB_FLOOR clamp only binds in
        # degenerate collapse and is ignored here.
        g = softmax_temperature(logits, 1.0)
        g[self.label] -= 1.0
        return g


class KLMatchHead(LossHead):
    """KL(softmax(z) || target) against a fixed target distribution."""

    __slots__ = ("target",)

    def __init__(self, target: Array):
        self.target = np.asarray(target, dtype=np.float64)

    def value(self, logits: Array) -> float:
        return kl_divergence(softmax_temperature(logits, 1.0), self.target)

    def grad(self, logits: Array) -> Array:
        p = softmax_temperature(logits, 1.0)
        q = np.maximum(self.target, PROB_FLOOR)
        with np.errstate(divide="ignore"):
            log_ratio = np.where(p > 0.0, np.log(np.maximum(p, PROB_FLOOR) / q), 0.0)
        kl = float(np.sum(np.where(p > 0.0, p * log_ratio, 0.0)))
        return p * (log_ratio - kl)


class SquaredErrorHead(LossHead):
    """Mean squared error of the logits against a target vector."""

    __slots__ = ("target",)

    def __init__(self, target: Array):
        self.target = np.asarray(target, dtype=np.float64)

    def value(self, logits: Array) -> float:
        d = logits - self.target
        return float(np.mean(d * d))

    def grad(self, logits: Array) -> Array:
        return 2.0 * (logits - self.target) / self.target.shape[0]


class ScaledHead(LossHead):
    """A loss head multiplied by a constant weight."""

    __slots__ = ("inner", "weight")

    def __init__(self, inner: LossHead, weight: float):
        self.inner = inner
        self.weight = float(weight)

    def value(self, logits: Array) -> float:
        return self.weight * self.inner.value(logits)

    def grad(self, logits: Array) -> Array:
        return self.weight * self.inner.grad(logits)


class SumHead(LossHead):
    """Sum of several loss heads on the same logits."""

    __slots__ = ("heads",)

    def __init__(self, *heads: LossHead):
        self.heads = heads

    def value(self, logits: Array) -> float:
        return float(sum(h.value(logits) for h in self.heads))

    def grad(self, logits: Array) -> Array:
        g = np.zeros_like(np.asarray(logits, dtype=np.float64))
        for h in self.heads:
            g += h.grad(logits)
        return g


LossEntry = tuple[Array, LossHead]
LossBatch = Sequence[LossEntry]


def _stack_inputs(params: ModelParams, batch: LossBatch) -> Array:
    if not batch:
        raise ValueError("empty loss batch")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    if X.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"batch input dim {X.shape[1]} does not match model input "
            f"{params.spec.input_dim}"
        )
    return X


def _trace(params: ModelParams, X: Array) -> tuple[list[Array], list[Array], Array]:
    """Forward pass keeping layer inputs and hidden pre-activations."""
    act, _ = _activation(params.spec)
    inputs = [X]
    pre: list[Array] = []
    A = X
    last = params.spec.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        Z = A @ W.T + b
        if l == last:
            return inputs, pre, Z
        pre.append(Z)
        A = act(Z)
        inputs.append(A)
    raise AssertionError("unreachable")


def _backprop(
    params: ModelParams, inputs: list[Array], pre: list[Array], delta: Array
) -> tuple[GradientSet, Array]:
    """Backpropagate an output-side delta; returns gradients and input delta."""
    _, dact = _activation(params.spec)
    gW: list[Array] = [None] * params.spec.n_layers  # type: ignore[list-item]
    gb: list[Array] = [None] * params.spec.n_layers  # type: ignore[list-item]
    for l in range(params.spec.n_layers - 1, -1, -1):
        gW[l] = delta.T @ inputs[l]
        gb[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            delta = delta * dact(pre[l - 1])
    return GradientSet(gW, gb), delta


def batch_loss(params: ModelParams, batch: LossBatch) -> float:
    """Mean of the per-entry head values over the batch."""
    X = _stack_inputs(params, batch)
    Z = forward_batch(params, X)
    return float(np.mean([head.value(Z[i]) for i, (_, head) in enumerate(batch)]))


def backward(params: ModelParams, batch: LossBatch) -> GradientSet:
    """Exact analytic gradient of ``batch_loss`` w.r.t. every parameter."""
    X = _stack_inputs(params, batch)
    inputs, pre, Z = _trace(params, X)
    delta = np.stack([head.grad(Z[i]) for i, (_, head) in enumerate(batch)])
    delta /= len(batch)
    grads, _ = _backprop(params, inputs, pre, delta)
    return grads


def backward_through(
    params: ModelParams, X: Array, output_grads: Array
) -> tuple[GradientSet, Array]:
    """Backpropagate caller-supplied dLoss/dlogits rows through the network.

    Returns the parameter gradients and the (batch, input_dim) gradient with
    respect to the inputs, which lets callers chain networks (the autoencoder
    trains its encoder through its decoder this way). No averaging is applied;
    the caller owns the scaling of ``output_grads``.
    """
    X = np.asarray(X, dtype=np.float64)
    output_grads = np.asarray(output_grads, dtype=np.float64)
    inputs, pre, Z = _trace(params, X)
    if output_grads.shape != Z.shape:
        raise ValueError(f"output grads {output_grads.shape} do not match logits {Z.shape}")
    return _backprop(params, inputs, pre, output_grads)


def sgd_step(params: ModelParams, grads: GradientSet, lr: float) -> ModelParams:
    """params - lr * grads, elementwise; returns new parameters."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for W, gW, b, gb in zip(params.weights, grads.weights, params.biases, grads.biases):
        if W.shape != gW.shape or b.shape != gb.shape:
            raise ValueError("gradient shapes do not match parameters")
    return ModelParams(
        params.spec,
        [W - lr * gW for W, gW in zip(params.weights, grads.weights)],
        [b - lr * gb for b, gb in zip(params.biases, grads.biases)],
    )


def finite_difference_check(
    params: ModelParams,
    batch: LossBatch,
    epsilon: float = 1e-5,
    *,
    max_coords: int = 64,
    seed: int = 0,
    denominator_floor: float = 1e-3,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes a deterministic random subset of parameter coordinates (all of
    them when the model has at most ``max_coords``). Coordinates whose
    gradient magnitude is below ``denominator_floor`` are effectively
    compared absolutely, which keeps roundoff in near-zero gradients from
    dominating the ratio.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    analytic = backward(params, batch)
    flat_params = params.weights + params.biases
    flat_grads = analytic.weights + analytic.biases
    sizes = [arr.size for arr in flat_params]
    total = sum(sizes)
    n_probe = min(total, max(50, min(max_coords, total)))
    rng = np.random.default_rng(seed)
    chosen = (
        np.arange(total) if n_probe == total
        else np.sort(rng.choice(total, size=n_probe, replace=False))
    )
    offsets = np.cumsum([0] + sizes)
    work = params.copy()
    flat_work = work.weights + work.biases
    worst = 0.0
    for flat_idx in chosen:
        a = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        i = int(flat_idx - offsets[a])
        orig = flat_work[a].flat[i]
        flat_work[a].flat[i] = orig + epsilon
        f_plus = batch_loss(work, batch)
        flat_work[a].flat[i] = orig - epsilon
        f_minus = batch_loss(work, batch)
        flat_work[a].flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * epsilon)
        an = flat_grads[a].flat[i]
        err = abs(fd - an) / max(abs(fd) + abs(an), denominator_floor)
        worst = max(worst, err)
    return worst
