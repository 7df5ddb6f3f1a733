"""Reverse-mode automatic differentiation over dense numpy arrays.

Values live in numpy float32/float64 arrays. Executed ops are recorded on an
explicit tape in execution order (which is a topological order); ``backward``
replays the tape in reverse, accumulating gradients into every reachable
tensor with ``requires_grad``, then clears the tape. Ops executed with no
active tape (or under ``no_grad``) compute values only.

Every op output is checked for NaN/Inf and raises ``AutodiffError`` on a
non-finite value. Attention masking is done by *replacing* masked logits with
a large negative constant, so masked positions get exactly zero weight and
outputs are bitwise independent of masked content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MASK_FILL = -1e30


class AutodiffError(RuntimeError):
    pass


class Tape:
    """Execution-ordered op record for one backward replay."""

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)


class _NoGrad:
    def __enter__(self) -> None:
        _STACK.append(None)

    def __exit__(self, *exc) -> None:
        _STACK.pop()


_STACK: list[Tape | None] = []


def no_grad() -> _NoGrad:
    return _NoGrad()


def _active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[Tensor], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Operator sugar; the gradient logic lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __getitem__(self, key):
        return slice_(self, key)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise AutodiffError(f"non-finite values produced by op '{op}'")


def _make(
    out_data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[Tensor], None],
    op: str,
) -> Tensor:
    _check_finite(out_data, op)
    requires = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        out._backward = backward_fn
        out._parents = parents
        out._tape = tape
        tape._nodes.append(out)
    return out


def backward(loss: Tensor) -> None:
    """Replay the loss's tape in reverse, populating .grad on reachable tensors."""
    if loss.data.shape != ():
        raise AutodiffError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None or not tape._nodes:
        raise AutodiffError("backward called without a recorded tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node)
        node._backward = None
        node._parents = ()
        node._tape = None
    tape._nodes.clear()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise AutodiffError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad, b.shape))

    return _make(out_data, (a, b), back, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise AutodiffError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return _make(out_data, (a, b), back, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(out.grad * factor)

    return _make(a.data * factor, (a,), back, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def back(out: Tensor) -> None:
        if a.requires_grad:
            ga = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            a.accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            b.accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), back, "matmul")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(np.transpose(out.grad, inverse))

    return _make(np.transpose(a.data, axes), (a,), back, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(out.grad.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), back, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise AutodiffError("concat needs at least one tensor")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise AutodiffError(f"concat: incompatible shapes {shapes}") from exc
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(out: Tensor) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index: list = [slice(None)] * out.grad.ndim
                index[axis] = slice(start, stop)
                t.accumulate(out.grad[tuple(index)])

    return _make(out_data, tuple(tensors), back, "concat")


def slice_(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def back(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            grad[key] += out.grad
            a.accumulate(grad)

    return _make(out_data, (a,), back, "slice")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(out: Tensor) -> None:
        if not a.requires_grad:
            return
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        a.accumulate(np.broadcast_to(grad, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]

    def back(out: Tensor) -> None:
        if not a.requires_grad:
            return
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        a.accumulate(np.broadcast_to(grad, a.shape) / count)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back, "mean")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(out.grad * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    # tanh approximation; the backward differentiates the same approximation.
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def back(out: Tensor) -> None:
        if not a.requires_grad:
            return
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a.accumulate(out.grad * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    return _make(0.5 * x * (1.0 + t), (a,), back, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def back(out: Tensor) -> None:
        if a.requires_grad:
            dot = (out.grad * out_data).sum(axis=axis, keepdims=True)
            a.accumulate(out_data * (out.grad - dot))

    return _make(out_data, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - logsum

    def back(out: Tensor) -> None:
        if a.requires_grad:
            total = out.grad.sum(axis=axis, keepdims=True)
            a.accumulate(out.grad - np.exp(out_data) * total)

    return _make(out_data, (a,), back, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis; eps keeps constant rows finite (they map to bias)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def back(out: Tensor) -> None:
        g = out.grad
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), back, "layer_norm")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise AutodiffError(
            f"embedding_lookup: id out of range for table of {table.data.shape[0]} rows"
        )
    out_data = table.data[ids]

    def back(out: Tensor) -> None:
        if table.requires_grad:
            grad = np.zeros_like(table.data)
            np.add.at(grad, ids, out.grad)
            table.accumulate(grad)

    return _make(out_data, (table,), back, "embedding_lookup")


def masked_fill(a: Tensor, keep_mask: np.ndarray, fill_value: float = MASK_FILL) -> Tensor:
    """Replace entries where keep_mask is False by fill_value (gradient blocked there)."""
    keep = np.asarray(keep_mask, dtype=bool)
    out_data = np.where(keep, a.data, fill_value)

    def back(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(np.where(keep, out.grad, 0.0), a.shape))

    return _make(out_data, (a,), back, "masked_fill")


def pick(a: Tensor, index) -> Tensor:
    """out[i] = a[i, index[i]] for a 2-D tensor; used for NLL target gathering."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.ndim != 1 or index.shape[0] != a.data.shape[0]:
        raise AutodiffError(f"pick: bad shapes {a.shape} and {index.shape}")
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, index]

    def back(out: Tensor) -> None:
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            grad[rows, index] = out.grad
            a.accumulate(grad)

    return _make(out_data, (a,), back, "pick")


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    mask: np.ndarray | None,
    heads: int,
) -> Tensor:
    """Scaled dot-product attention with head split; no learned projections here.

    ``mask`` is a boolean keep-mask broadcastable to (query_len, key_len).
    Masked logits are *replaced* by a large negative constant, so masked
    positions get exactly zero weight and the output is bitwise independent
    of masked content. Implemented as one fused op with an analytic backward
    to keep tape overhead low.
    """
    q_len, dim = queries.shape
    k_len = keys.shape[0]
    if dim % heads != 0:
        raise AutodiffError(f"multi_head_attention: model dim {dim} not divisible by {heads} heads")
    if keys.shape != values.shape:
        raise AutodiffError(
            f"multi_head_attention: keys {keys.shape} and values {values.shape} differ"
        )
    head_dim = dim // heads
    inv_scale = 1.0 / math.sqrt(head_dim)
    q = queries.data.reshape(q_len, heads, head_dim).transpose(1, 0, 2)
    k = keys.data.reshape(k_len, heads, head_dim).transpose(1, 0, 2)
    v = values.data.reshape(k_len, heads, head_dim).transpose(1, 0, 2)
    scores = np.matmul(q, k.transpose(0, 2, 1)) * inv_scale
    keep = None
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), (q_len, k_len))[None, :, :]
        scores = np.where(keep, scores, MASK_FILL)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    weights = exp / exp.sum(axis=-1, keepdims=True)
    mixed = np.matmul(weights, v)
    out_data = mixed.transpose(1, 0, 2).reshape(q_len, dim)

    def back(out: Tensor) -> None:
        d_mixed = out.grad.reshape(q_len, heads, head_dim).transpose(1, 0, 2)
        d_weights = np.matmul(d_mixed, v.transpose(0, 2, 1))
        d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True))
        if keep is not None:
            d_scores = np.where(keep, d_scores, 0.0)
        if queries.requires_grad:
            dq = np.matmul(d_scores, k) * inv_scale
            queries.accumulate(dq.transpose(1, 0, 2).reshape(q_len, dim))
        if keys.requires_grad:
            dk = np.matmul(d_scores.transpose(0, 2, 1), q) * inv_scale
            keys.accumulate(dk.transpose(1, 0, 2).reshape(k_len, dim))
        if values.requires_grad:
            dv = np.matmul(weights.transpose(0, 2, 1), d_mixed)
            values.accumulate(dv.transpose(1, 0, 2).reshape(k_len, dim))

    return _make(out_data, (queries, keys, values), back, "multi_head_attention")


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    max_abs_error: float
    grad_scale: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def worst(self) -> GradCheckEntry | None:
        return max(self.entries, key=lambda e: e.max_rel_error, default=None)


def finite_difference_check(
    params,
    loss_fn: Callable[[], Tensor],
    tolerance: float = 1e-4,
    epsilon: float = 1e-3,
    scale_floor: float = 1e-6,
) -> GradCheckReport:
    """Central-difference check of analytic grads, per parameter tensor.

    Relative error is measured against each tensor's gradient magnitude (max
    over analytic and numeric, floored at ``scale_floor``), so parameters with
    structurally zero gradients compare cleanly. Requires 64-bit parameters.
    """
    for name, tensor in params.items():
        if tensor.dtype != np.float64:
            raise AutodiffError(f"finite_difference_check requires float64 params ({name})")
        tensor.zero_grad()
    with Tape():
        loss = loss_fn()
        backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    report = GradCheckReport(tolerance=tolerance)
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        numeric = np.zeros_like(flat)
        with no_grad():
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + epsilon
                up = float(loss_fn().data)
                flat[i] = original - epsilon
                down = float(loss_fn().data)
                flat[i] = original
                numeric[i] = (up - down) / (2.0 * epsilon)
        a = analytic[name].reshape(-1)
        scale_ = max(float(np.abs(a).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
        abs_err = float(np.abs(a - numeric).max(initial=0.0))
        rel_err = abs_err / max(scale_, scale_floor)
        report.entries.append(
            GradCheckEntry(name=name, max_rel_error=rel_err, max_abs_error=abs_err, grad_scale=scale_)
        )
        tensor.zero_grad()
    return report
