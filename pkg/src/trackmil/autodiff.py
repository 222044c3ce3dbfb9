"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Everything is a 2-D array: feature maps are ``channels x time``, vectors are
columns, scalars are ``1 x 1``. Each operation records a backward closure on a
tape; ``Tensor.backward()`` replays the tape in reverse topological order and
*accumulates* gradients into ``Tensor.grad``, so several graphs sharing the
same leaf parameters (e.g. the bags of one optimization step) sum their
contributions naturally.

Scope is deliberately narrow: no broadcasting beyond per-channel scale/shift
inside the normalization ops, no higher-order derivatives, CPU only.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, InputError, UsageError

_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (forward passes only)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A 2-D float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D matrices, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DimensionError(f"matrix dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise UsageError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """A view of the same values, disconnected from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; visits each node exactly once."""
        if self.data.shape != (1, 1):
            raise UsageError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        _add_grad(self, np.ones((1, 1)))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _add_grad(t: Tensor, delta) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def _record(out: Tensor, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    if _GRAD_ENABLED:
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
            out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _add_grad(a, g)
        if b.requires_grad:
            _add_grad(b, g)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _add_grad(a, g)
        if b.requires_grad:
            _add_grad(b, -g)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _add_grad(a, g * b.data)
        if b.requires_grad:
            _add_grad(b, g * a.data)

    return _record(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)
    out = Tensor(a.data * c)

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad * c)

    return _record(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    out = Tensor(a.data @ b.data)

    def backward() -> None:
        g = out.grad
        if a.requires_grad:
            _add_grad(a, g @ b.data.T)
        if b.requires_grad:
            _add_grad(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad.T)

    return _record(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    out = Tensor(np.array([[a.data.sum()]]))

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad[0, 0])

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad * (a.data > 0.0))

    return _record(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad * (1.0 - out.data * out.data))

    return _record(out, (a,), backward)


def sigmoid_values(x) -> np.ndarray:
    """Numerically stable logistic function on a plain array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(sigmoid_values(a.data))

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad * out.data * (1.0 - out.data))

    return _record(out, (a,), backward)


def softmax_columns(a: Tensor) -> Tensor:
    """Column-wise softmax, stabilized by per-column max subtraction."""
    z = a.data - a.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=0, keepdims=True))

    def backward() -> None:
        if a.requires_grad:
            g = out.grad
            y = out.data
            _add_grad(a, y * (g - (y * g).sum(axis=0, keepdims=True)))

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# structure


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices vertically; all inputs must share the column count."""
    if not parts:
        raise InputError("concat_rows: no inputs")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(
                f"concat_rows: column counts differ ({p.shape} vs {parts[0].shape})"
            )
    out = Tensor(np.vstack([p.data for p in parts]))
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def backward() -> None:
        g = out.grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _add_grad(p, g[lo:hi])

    return _record(out, tuple(parts), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices horizontally; all inputs must share the row count."""
    if not parts:
        raise InputError("concat_cols: no inputs")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(
                f"concat_cols: row counts differ ({p.shape} vs {parts[0].shape})"
            )
    out = Tensor(np.hstack([p.data for p in parts]))
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def backward() -> None:
        g = out.grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _add_grad(p, g[:, lo:hi])

    return _record(out, tuple(parts), backward)


# ---------------------------------------------------------------------------
# pooling


def maxpool_time(a: Tensor) -> Tensor:
    """Row-wise max over time; gradient flows to the first maximal position."""
    idx = a.data.argmax(axis=1)
    rows = np.arange(a.rows)
    out = Tensor(a.data[rows, idx][:, None])

    def backward() -> None:
        if a.requires_grad:
            delta = np.zeros_like(a.data)
            delta[rows, idx] = out.grad[:, 0]
            _add_grad(a, delta)

    return _record(out, (a,), backward)


def meanpool_time(a: Tensor) -> Tensor:
    """Row-wise mean over time."""
    out = Tensor(a.data.mean(axis=1, keepdims=True))
    inv = 1.0 / a.cols

    def backward() -> None:
        if a.requires_grad:
            _add_grad(a, out.grad * inv)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# temporal convolution


def conv1d_dilated(x: Tensor, kernel: Tensor, kernel_size: int, dilation: int) -> Tensor:
    """Length-preserving dilated 1-D convolution along the time axis.

    ``x`` is ``in_channels x T``. The kernel is stored flat as
    ``out_channels x (in_channels * kernel_size)`` with the tap index varying
    fastest, i.e. column ``i * kernel_size + j`` holds input channel ``i`` at
    tap ``j``. Zero padding of width ``dilation * (kernel_size - 1) / 2`` on
    both ends keeps the output length at ``T``.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
    if dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {dilation}")
    d_in, length = x.shape
    d_out, flat = kernel.shape
    if flat != d_in * kernel_size:
        raise DimensionError(
            f"conv1d_dilated: kernel {kernel.shape} does not match input {x.shape} "
            f"with kernel size {kernel_size}"
        )
    pad = dilation * (kernel_size - 1) // 2
    padded = np.zeros((d_in, length + 2 * pad))
    padded[:, pad:pad + length] = x.data
    taps = np.arange(length)[None, :] + dilation * np.arange(kernel_size)[:, None]
    columns = padded[:, taps].reshape(d_in * kernel_size, length)
    out = Tensor(kernel.data @ columns)

    def backward() -> None:
        g = out.grad
        if kernel.requires_grad:
            _add_grad(kernel, g @ columns.T)
        if x.requires_grad:
            gcols = (kernel.data.T @ g).reshape(d_in, kernel_size, length)
            gpad = np.zeros_like(padded)
            np.add.at(gpad, (slice(None), taps), gcols)
            _add_grad(x, gpad[:, pad:pad + length])

    return _record(out, (x, kernel), backward)


# ---------------------------------------------------------------------------
# gradient reversal


def gradient_reversal(x: Tensor, alpha: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -alpha."""
    alpha = float(alpha)
    if alpha <= 0.0:
        raise ConfigurationError(f"gradient reversal coefficient must be > 0, got {alpha}")
    out = Tensor(x.data)

    def backward() -> None:
        if x.requires_grad:
            _add_grad(x, -alpha * out.grad)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalization

NORM_EPS = 1e-5


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axis: int, eps: float) -> Tensor:
    if gamma.shape != (x.rows, 1) or beta.shape != (x.rows, 1):
        raise DimensionError(
            f"normalization scale/shift must be {(x.rows, 1)}, got "
            f"{gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(gamma.data * xhat + beta.data)

    def backward() -> None:
        g = out.grad
        if beta.requires_grad:
            _add_grad(beta, g.sum(axis=1, keepdims=True))
        if gamma.requires_grad:
            _add_grad(gamma, (g * xhat).sum(axis=1, keepdims=True))
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh
                - gh.mean(axis=axis, keepdims=True)
                - xhat * (gh * xhat).mean(axis=axis, keepdims=True)
            )
            _add_grad(x, gx)

    return _record(out, (x, gamma, beta), backward)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize each channel (row) to zero mean / unit variance over time.

    Learned per-channel scale ``gamma`` and shift ``beta`` (both ``D x 1``).
    A constant row has zero variance; ``eps`` keeps it finite, and the output
    row collapses to the learned shift.
    """
    return _normalize(x, gamma, beta, axis=1, eps=eps)


def frame_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize each time step (column) over the channel axis.

    Same learned per-channel scale/shift as :func:`channel_norm`, but the
    statistics are local to a single column, so no information crosses time
    steps. This is the default inside the temporal aggregation layers, where
    strict receptive-field locality matters.
    """
    return _normalize(x, gamma, beta, axis=0, eps=eps)


# ---------------------------------------------------------------------------
# losses


def binary_cross_entropy(logit: Tensor, label: int) -> Tensor:
    """BCE against a hard label, evaluated in logit space for stability."""
    if label not in (0, 1):
        raise InputError(f"binary label must be 0 or 1, got {label!r}")
    if logit.shape != (1, 1):
        raise DimensionError(f"binary_cross_entropy expects a 1x1 logit, got {logit.shape}")
    z = logit.data[0, 0]
    y = float(label)
    value = max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))
    out = Tensor(np.array([[value]]))

    def backward() -> None:
        if logit.requires_grad:
            _add_grad(logit, out.grad * (sigmoid_values(np.array([[z]])) - y))

    return _record(out, (logit,), backward)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Multiclass cross-entropy for a column of logits (log-sum-exp form)."""
    if logits.cols != 1:
        raise DimensionError(f"cross_entropy expects a column of logits, got {logits.shape}")
    n = logits.rows
    if not 0 <= target < n:
        raise InputError(f"class index {target!r} outside [0, {n})")
    z = logits.data[:, 0]
    m = z.max()
    lse = m + math.log(np.exp(z - m).sum())
    out = Tensor(np.array([[lse - z[target]]]))

    def backward() -> None:
        if logits.requires_grad:
            p = np.exp(z - lse)
            p[target] -= 1.0
            _add_grad(logits, out.grad[0, 0] * p[:, None])

    return _record(out, (logits,), backward)


def l1_norm(v: Tensor) -> Tensor:
    """Sum of absolute values of all entries (subgradient 0 at 0)."""
    out = Tensor(np.array([[np.abs(v.data).sum()]]))

    def backward() -> None:
        if v.requires_grad:
            _add_grad(v, out.grad[0, 0] * np.sign(v.data))

    return _record(out, (v,), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moment estimates keyed by parameter name."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; missing gradients count as zero."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.data.shape:
            raise DimensionError(
                f"optimizer state for {name!r} has shape {m.shape}, parameter is {p.data.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_gradients(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
