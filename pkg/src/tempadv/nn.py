"""Minimal reverse-mode differentiable core.

Everything in this package trains through the ops defined here: dense
layers, sigmoid/tanh activations, softmax cross-entropy, and Adam. The
graphs are small (tens of units, windows of 8 steps), so all math is
float64 numpy for determinism and gradient-check fidelity.

Gradients are recorded on an explicit tape: each op appends a backward
closure while a `Tape` is active, and `Tape.backward` replays the
closures in exact reverse order. With no active tape the ops run
forward-only (inference mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InputError, NumericError

_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A float64 array plus an accumulated gradient buffer.

    `grad` is allocated lazily on first accumulation and always matches
    `data` in shape. Parameters are long-lived Tensors; intermediates
    are created per forward pass.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tape:
    """Ordered record of one forward pass, replayed backwards.

    Use as a context manager around graph construction; call
    `backward(loss)` afterwards to accumulate gradients into every
    Tensor that participated.
    """

    def __init__(self) -> None:
        self._steps: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False

    def record(self, fn: Callable[[], None]) -> None:
        self._steps.append(fn)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ConfigError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise NumericError("loss is not finite")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._steps):
            fn()


def assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# ops


def linear(x: Tensor, w: Tensor, b: Tensor | None = None, scale: float = 1.0) -> Tensor:
    """y = x @ (scale * w).T + b  with x (B, in), w (out, in), b (out,).

    `scale` multiplies the weight on the forward path, so gradients flow
    through the scaled weight (the time-dilation hook). The bias is
    never scaled.
    """
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ConfigError(f"linear expects 2-d x and w, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ConfigError(
            f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape} (in={w.data.shape[1]})"
        )
    weff = w.data if scale == 1.0 else scale * w.data
    y = x.data @ weff.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ConfigError(f"bias shape {b.data.shape} does not match w {w.data.shape}")
        y = y + b.data
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:
        xd = x.data

        def back() -> None:
            g = out.grad
            if g is None:
                return
            _accumulate(w, scale * (g.T @ xd))
            _accumulate(x, g @ weff)
            if b is not None:
                _accumulate(b, g.sum(axis=0))

        tape.record(back)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ConfigError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is None:
                return
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)

        tape.record(back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ConfigError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)
    tape = _active_tape()
    if tape is not None:
        ad, bd = a.data, b.data

        def back() -> None:
            if out.grad is None:
                return
            _accumulate(a, out.grad * bd)
            _accumulate(b, out.grad * ad)

        tape.record(back)
    return out


def one_minus(x: Tensor) -> Tensor:
    out = Tensor(1.0 - x.data)
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, -out.grad)

        tape.record(back)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # stable for large |x|: exp only ever sees non-positive arguments
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * y * (1.0 - y))

        tape.record(back)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad * (1.0 - y * y))

        tape.record(back)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    tape = _active_tape()
    if tape is not None:
        orig = x.data.shape

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, out.grad.reshape(orig))

        tape.record(back)
    return out


def scatter_columns(base: np.ndarray, values: Tensor, cols: np.ndarray) -> Tensor:
    """Overwrite `cols` of a constant (B, F) base with `values` (B, len(cols)).

    The base is a plain array, not a Tensor: gradients flow only into
    `values`. This is the hard index-select that keeps functional
    feature columns out of the differentiable path.
    """
    if values.data.shape != (base.shape[0], len(cols)):
        raise ConfigError(
            f"scatter shape mismatch: values {values.data.shape} vs base {base.shape} cols {len(cols)}"
        )
    merged = base.copy()
    merged[:, cols] = values.data
    out = Tensor(merged)
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(values, out.grad[:, cols])

        tape.record(back)
    return out


def softmax_cross_entropy_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row −log softmax(logits)[label] for logits (B, C), labels (B,).

    Log-sum-exp stabilized; gradient w.r.t. logits is softmax − one_hot.
    """
    d = logits.data
    if d.ndim != 2 or d.shape[1] < 2:
        raise InputError(f"need (B, C>=2) logits, got shape {d.shape}")
    labels = np.asarray(labels)
    if labels.shape != (d.shape[0],):
        raise InputError(f"labels shape {labels.shape} does not match logits {d.shape}")
    if labels.min() < 0 or labels.max() >= d.shape[1]:
        raise InputError(f"class index out of range for {d.shape[1]} classes")
    m = d.max(axis=1, keepdims=True)
    z = d - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(d.shape[0])
    out = Tensor(-logp[rows, labels])
    tape = _active_tape()
    if tape is not None:
        p = np.exp(logp)

        def back() -> None:
            if out.grad is None:
                return
            g = p.copy()
            g[rows, labels] -= 1.0
            _accumulate(logits, g * out.grad[:, None])

        tape.record(back)
    return out


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, np.full_like(x.data, float(out.grad) / n))

        tape.record(back)
    return out


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    tape = _active_tape()
    if tape is not None:

        def back() -> None:
            if out.grad is not None:
                _accumulate(x, np.full_like(x.data, float(out.grad)))

        tape.record(back)
    return out


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseLayer:
    """Affine + activation block: activation(W·x + b).

    weights: (out, in), bias: (out,), activation in {sigmoid, tanh, linear}.
    """

    weights: Tensor
    bias: Tensor
    activation: str = "linear"

    def __post_init__(self) -> None:
        if self.activation not in ("sigmoid", "tanh", "linear"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.bias.data.shape != (self.weights.data.shape[0],):
            raise ConfigError(
                f"bias length {self.bias.data.shape} does not match weights {self.weights.data.shape}"
            )

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


def dense_forward(x: Tensor, layer: DenseLayer) -> Tensor:
    """Apply one dense layer to x of shape (B, in) or (in,)."""
    squeeze = x.data.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.data.shape[0]))
    if x.data.shape[1] != layer.weights.data.shape[1]:
        raise ConfigError(
            f"input width {x.data.shape[1]} does not match layer weights {layer.weights.data.shape}"
        )
    y = linear(x, layer.weights, layer.bias)
    if layer.activation == "sigmoid":
        y = sigmoid(y)
    elif layer.activation == "tanh":
        y = tanh(y)
    if squeeze:
        y = reshape(y, (y.data.shape[1],))
    return y


def softmax_cross_entropy(logits: Tensor, target_class: int) -> Tensor:
    """Scalar −log softmax(logits)[target_class] for a 1-d logits vector."""
    l2 = reshape(logits, (1, logits.data.shape[0])) if logits.data.ndim == 1 else logits
    rows = softmax_cross_entropy_rows(l2, np.array([target_class]))
    return reduce_sum(rows)


def init_matrix(rng: np.random.Generator, out_dim: int, in_dim: int) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(in_dim)
    return Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)))


def init_dense(rng: np.random.Generator, out_dim: int, in_dim: int, activation: str = "linear") -> DenseLayer:
    return DenseLayer(init_matrix(rng, out_dim, in_dim), Tensor(np.zeros(out_dim)), activation)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        if lr <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or epsilon <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.data.shape:
                raise ConfigError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# gradient oracle


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    probe_count: int = 20,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild the scalar loss from the current parameter
    values on every call and be deterministic. Probes `probe_count`
    randomly chosen coordinates across all params. Relative error is
    |analytic − numeric| / max(|numeric|, 1e-3), so a gradient that is
    twice the true value reads as ≈ 1.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    base = float(loss.data)
    if not np.isfinite(base):
        raise NumericError("loss_fn produced a non-finite loss")
    tape.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    sizes = [p.data.size for p in params]
    total = int(sum(sizes))
    picks = rng.integers(0, total, size=probe_count)
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    for flat_idx in picks:
        pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        ci = int(flat_idx - offsets[pi])
        flat = params[pi].data.reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + step
        lp = float(loss_fn().data)
        flat[ci] = orig - step
        lm = float(loss_fn().data)
        flat[ci] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError("loss_fn produced a non-finite loss during probing")
        numeric = (lp - lm) / (2.0 * step)
        a = analytic[pi].reshape(-1)[ci]
        rel = abs(a - numeric) / max(abs(numeric), 1e-3)
        worst = max(worst, rel)
    return worst
