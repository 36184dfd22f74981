# modules/numerics.py

"""Dense tensors with a recorded computation tape for reverse-mode gradients.

Every operation computes its forward value with numpy and, when a tape is
active and one of its inputs requires a gradient, appends an entry holding the
inputs, the output and a backward rule. `backward` walks the tape once in
reverse order.
"""

import logging
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from modules.errors import (ConfigurationError, ContractError, DegenerateInputError,
                            DimensionError, InputError, NumericalError)

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE: ContextVar = ContextVar("default_dtype", default=np.float32)
_ACTIVE_TAPE: ContextVar = ContextVar("active_tape", default=None)

GELU_COEFF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715
# below this, central differences at h = 1e-5 are dominated by rounding
SAMPLED_GRAD_FLOOR = 1e-6

ArrayLike = Union[np.ndarray, Sequence, float]


def get_default_dtype():
    return _DEFAULT_DTYPE.get()


@contextmanager
def default_dtype(dtype):
    """Create tensors as `dtype` inside the block (float64 for gradient verification)"""
    token = _DEFAULT_DTYPE.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype if dtype is not None else get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass(frozen=True)
class TapeEntry:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ComputeTape:
    """Ordered record of operations; use as a context manager to activate it."""

    def __init__(self):
        self.entries = []
        self._token = None

    def record(self, entry: TapeEntry):
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"Non-finite values produced by {name}")
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=tracked)
    if tracked:
        tape.record(TapeEntry(name, tuple(inputs), out, backward_fn))
    return out


def _sum_to_shape(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the trailing-dims bias shape"""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


def _check_broadcast(name: str, a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not agree")


# --- Arithmetic ---

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a bias matching the trailing dims of `a`"""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def grad_fn(g):
        return g, _sum_to_shape(g, b.shape)
    return _result("add", a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def grad_fn(g):
        return g, -_sum_to_shape(g, b.shape)
    return _result("sub", a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not agree")

    def grad_fn(g):
        return g * b.data, g * a.data
    return _result("mul", a.data * b.data, (a, b), grad_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    def grad_fn(g):
        return (g * factor,)
    return _result("scale", x.data * x.data.dtype.type(factor), (x,), grad_fn)


def square(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (2.0 * x.data * g,)
    return _result("square", x.data * x.data, (x,), grad_fn)


def absolute(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.sign(x.data) * g,)
    return _result("absolute", np.abs(x.data), (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims, when present, must match exactly"""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not agree")

    def grad_fn(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g
    return _result("matmul", a.data @ b.data, (a, b), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ weight[in, out] (+ bias[out])"""
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)), x.shape[-1]))
    out = reshape(matmul(flat, weight), lead + (weight.shape[-1],))
    if bias is not None:
        out = add(out, bias)
    return out


# --- Structure ---

def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape

    def grad_fn(g):
        return (g.reshape(original),)
    return _result("reshape", x.data.reshape(shape), (x,), grad_fn)


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inverse),)
    return _result("transpose", np.ascontiguousarray(np.transpose(x.data, axes)), (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    axis = axis % tensors[0].ndim
    leads = {t.shape[:axis] + t.shape[axis + 1:] for t in tensors}
    if len(leads) != 1:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return np.split(g, splits, axis=axis)
    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def reduce_sum(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)
    return _result("reduce_sum", np.asarray(x.data.sum()), (x,), grad_fn)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.size

    def grad_fn(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)
    return _result("reduce_mean", np.asarray(x.data.mean()), (x,), grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; gradients scatter-add back into the table"""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(f"token id out of range [0, {table.shape[0]})")

    def grad_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)
    return _result("embedding", table.data[ids], (table,), grad_fn)


def select_position(x: Tensor, index: int) -> Tensor:
    """x[:, index, :] for a [B, T, H] tensor"""
    def grad_fn(g):
        grad = np.zeros_like(x.data)
        grad[:, index, :] = g
        return (grad,)
    return _result("select_position", x.data[:, index, :].copy(), (x,), grad_fn)


def apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Zero out positions where the [B, T] mask is 0"""
    keep = np.asarray(mask, dtype=bool)[..., None]

    def grad_fn(g):
        return (np.where(keep, g, 0.0).astype(g.dtype),)
    return _result("apply_mask", np.where(keep, x.data, 0.0).astype(x.dtype), (x,), grad_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def grad_fn(g):
        return (g * keep,)
    return _result("dropout", x.data * keep, (x,), grad_fn)


# --- Nonlinearities ---

def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along `axis`; positions where `mask` is False are treated as -inf"""
    logits = x.data
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    peak = np.max(logits, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    exp = np.exp(logits - peak)
    total = np.sum(exp, axis=axis, keepdims=True)
    probs = np.divide(exp, total, out=np.zeros_like(exp), where=total > 0).astype(x.dtype)

    def grad_fn(g):
        inner = np.sum(g * probs, axis=axis, keepdims=True)
        return (probs * (g - inner),)
    return _result("softmax", probs, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then gamma * x + beta"""
    if x.shape[-1] < 1 or gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
        raise DimensionError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    # statistics in float64: with eps near 1e-12 a one-ulp float32 mean error is scaled by ~1e6
    wide = x.data.astype(np.float64)
    centered = wide - wide.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    out = normed * gamma.data + beta.data

    def grad_fn(g):
        g_normed = g.astype(np.float64) * gamma.data
        g_x = inv_std * (g_normed
                         - g_normed.mean(axis=-1, keepdims=True)
                         - normed * np.mean(g_normed * normed, axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return (g_x.astype(x.dtype), np.sum(g * normed, axis=lead).astype(gamma.dtype),
                np.sum(g, axis=lead).astype(beta.dtype))
    return _result("layer_norm", out.astype(x.dtype), (x, gamma, beta), grad_fn)


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise tanh, or gelu in its tanh-approximation form
    0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))"""
    if kind == "tanh":
        out = np.tanh(x.data)

        def grad_fn(g):
            return (g * (1.0 - out * out),)
        return _result("tanh", out, (x,), grad_fn)

    if kind == "gelu":
        z = x.data
        inner = np.tanh(GELU_COEFF * (z + GELU_CUBIC * z ** 3))
        out = 0.5 * z * (1.0 + inner)

        def grad_fn(g):
            d_inner = (1.0 - inner * inner) * GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * z * z)
            return (g * (0.5 * (1.0 + inner) + 0.5 * z * d_inner),)
        return _result("gelu", out.astype(x.dtype), (x,), grad_fn)

    raise ConfigurationError(f"Unknown activation '{kind}'")


# --- Convolution and pooling ---

def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation along the token axis with same-size zero padding.

    x: [B, T, C_in], kernel: [k, C_in, C_out], bias: [C_out] -> [B, T, C_out]
    """
    k, c_in, c_out = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d kernel width {k} must be odd")
    if x.ndim != 3 or x.shape[2] != c_in or bias.shape != (c_out,):
        raise DimensionError(f"conv1d: x {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    pad = k // 2
    steps = x.shape[1]
    padded = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    out = np.broadcast_to(bias.data, x.shape[:2] + (c_out,)).copy()
    for tap in range(k):
        out += padded[:, tap:tap + steps, :] @ kernel.data[tap]

    def grad_fn(g):
        g_padded = np.zeros_like(padded)
        g_kernel = np.zeros_like(kernel.data)
        for tap in range(k):
            g_padded[:, tap:tap + steps, :] += g @ kernel.data[tap].T
            g_kernel[tap] = np.einsum("btc,bto->co", padded[:, tap:tap + steps, :], g)
        return g_padded[:, pad:pad + steps, :], g_kernel, g.sum(axis=(0, 1))
    return _result("conv1d", out, (x, kernel, bias), grad_fn)


def pooled_length(steps: int, size: int, stride: int) -> int:
    """Window count; the last window may be partial so no position is dropped"""
    return math.ceil(max(steps - size, 0) / stride) + 1


def max_pool1d(x: Tensor, size: int, stride: int, mask: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Windowed maximum along the token axis of a [B, T, C] tensor.

    Masked positions count as -inf. A window with no valid position emits 0
    and is flagged invalid in the returned [B, T'] mask.
    """
    if size < 1 or stride < 1:
        raise ConfigurationError(f"max_pool1d needs size, stride >= 1 (got {size}, {stride})")
    batch, steps, channels = x.shape
    valid = np.asarray(mask, dtype=bool)
    values = np.where(valid[..., None], x.data, -np.inf)
    windows = pooled_length(steps, size, stride)
    out = np.zeros((batch, windows, channels), dtype=x.dtype)
    out_mask = np.zeros((batch, windows), dtype=np.int8)
    argmax = np.zeros((batch, windows, channels), dtype=np.int64)
    for w in range(windows):
        start = w * stride
        stop = min(start + size, steps)
        idx = start + np.argmax(values[:, start:stop, :], axis=1)
        window_valid = valid[:, start:stop].any(axis=1)
        picked = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]
        out[:, w, :] = np.where(window_valid[:, None], picked, 0.0)
        out_mask[:, w] = window_valid
        argmax[:, w, :] = idx

    def grad_fn(g):
        grad = np.zeros_like(x.data)
        g = g * out_mask[..., None]
        rows = np.arange(batch)[:, None, None]
        cols = np.arange(channels)[None, None, :]
        np.add.at(grad, (np.broadcast_to(rows, argmax.shape), argmax,
                         np.broadcast_to(cols, argmax.shape)), g)
        return (grad,)
    return _result("max_pool1d", out, (x,), grad_fn), out_mask


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over unmasked token positions of a [B, T, H] tensor -> [B, H]"""
    keep = np.asarray(mask, dtype=bool)
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        raise DegenerateInputError("masked_mean: a mask row has no valid position")
    weights = (keep / counts[:, None]).astype(x.dtype)[..., None]
    out = np.where(keep[..., None], x.data, 0.0).sum(axis=1) / counts[:, None]

    def grad_fn(g):
        return (g[:, None, :] * weights,)
    return _result("masked_mean", out.astype(x.dtype), (x,), grad_fn)


# --- Similarity and losses ---

def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise u.v / (|u| |v|) clamped to [-1, 1]; [H] inputs give a scalar"""
    if u.shape != v.shape:
        raise DimensionError(f"cosine_similarity: shapes {u.shape} and {v.shape} do not agree")
    norm_u = np.linalg.norm(u.data, axis=-1)
    norm_v = np.linalg.norm(v.data, axis=-1)
    if np.any(norm_u == 0) or np.any(norm_v == 0):
        raise DegenerateInputError("cosine_similarity of a zero-norm vector")
    dot = np.sum(u.data * v.data, axis=-1)
    cos = np.clip(dot / (norm_u * norm_v), -1.0, 1.0)

    def grad_fn(g):
        g = np.asarray(g)[..., None]
        nu, nv, c = norm_u[..., None], norm_v[..., None], cos[..., None]
        g_u = g * (v.data / (nu * nv) - c * u.data / (nu * nu))
        g_v = g * (u.data / (nu * nv) - c * v.data / (nv * nv))
        return g_u, g_v
    return _result("cosine_similarity", np.asarray(cos, dtype=u.dtype), (u, v), grad_fn)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[label], via log-sum-exp"""
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"cross_entropy: {batch} logit rows but labels shaped {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(f"cross_entropy: label outside [0, {classes})")
    peak = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - peak
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def grad_fn(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)
    return _result("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn)


# --- Differentiation ---

def backward(loss: Tensor, tape: ComputeTape):
    """Populate .grad on every tensor reached from `loss` through `tape`.

    Leaf tensors (never produced by a recorded op) accumulate into an existing
    grad; a leaf that is on the tape but receives no signal gets zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(entry.output) for entry in tape.entries}
    if id(loss) not in produced:
        raise ContractError("loss was not produced by an operation on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for entry in reversed(tape.entries):
        for t in entry.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        entry.output.grad = g
        for t, g_in in zip(entry.inputs, entry.backward(g)):
            if g_in is None or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + g_in if key in grads else g_in

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between the tape gradient of scalar f at x and central differences.

    Error per coordinate: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    With `max_coords`, the `max_coords` coordinates with the largest analytic
    magnitude are checked together with up to `max_coords` more drawn uniformly
    (seeded) from the rest whose analytic value is exactly zero or at least
    SAMPLED_GRAD_FLOOR. Meaningful only for float64 tensors.
    """
    saved_flag, saved_grad = x.requires_grad, x.grad
    x.requires_grad, x.grad = True, None
    try:
        with ComputeTape() as tape:
            out = f(x)
        if out.size != 1:
            raise ContractError(f"finite_diff_check needs a scalar function, got shape {out.shape}")
        if any(entry.output is out for entry in tape.entries):
            backward(out, tape)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        analytic = np.array(analytic, dtype=np.float64)
    finally:
        x.requires_grad, x.grad = saved_flag, saved_grad

    flat_order = np.argsort(-np.abs(analytic).reshape(-1), kind="stable")
    if max_coords is not None:
        rest = flat_order[max_coords:]
        magnitude = np.abs(analytic).reshape(-1)[rest]
        eligible = rest[(magnitude == 0.0) | (magnitude >= SAMPLED_GRAD_FLOOR)]
        drawn = np.random.default_rng(seed).choice(eligible, size=min(max_coords, eligible.size), replace=False)
        flat_order = np.concatenate([flat_order[:max_coords], np.sort(drawn)])

    worst = 0.0
    for flat_index in flat_order:
        index = np.unravel_index(flat_index, x.shape)
        original = x.data[index]
        x.data[index] = original + h
        plus = f(x).item()
        x.data[index] = original - h
        minus = f(x).item()
        x.data[index] = original
        numeric = (plus - minus) / (2.0 * h)
        a = float(analytic[index])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    logger.debug("finite_diff_check over %d coordinates: max rel err %.3e", len(flat_order), worst)
    return worst
