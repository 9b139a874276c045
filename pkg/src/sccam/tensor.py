"""A small define-by-run reverse-mode tensor engine on top of numpy.

Only the operations the SCCAM network needs are provided. Every op accepts an
optional leading batch axis: a ``C x H x W`` feature map and a ``B x C x H x W``
batch go through the same functions.

Recording happens only inside an active :class:`Tape`::

    with Tape() as tape:
        y = relu(dense(x, w))
        loss = tsum(y)
    backward(tape, loss)

Contract for ``backward``: a tape can be consumed exactly once. A second call on
the same tape raises :class:`~sccam.errors.ContractError`. Gradients of every
tensor recorded on the tape are *overwritten*, not accumulated, so leaf
tensors reused across several tapes never carry stale gradients.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NonFiniteError, ShapeError, StateError

DTYPE = np.float64

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class _Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable ops executed while the tape is active."""

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)


def apply_op(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record the op on the active tape.

    ``backward_fn`` maps the output gradient to a sequence of input gradients
    (``None`` for inputs that need none). Exposed so losses can register fused ops.
    """
    out = Tensor(out_data, name=name)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape.consumed:
            raise ContractError("cannot record on a tape that has already been backpropagated")
        out.requires_grad = True
        node = _Node(name, tuple(inputs), out, backward_fn)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Populate ``.grad`` with d(loss)/d(tensor) for every tensor on ``tape``.

    Tensors listed in ``params`` that did not take part in the computation end
    with an all-zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward call")
    if loss._node is None or loss._node not in tape.nodes:
        raise ContractError("loss was not produced by an op recorded on this tape")
    tape.consumed = True

    for p in params:
        p.grad = np.zeros_like(p.data)
    for node in tape.nodes:
        node.output.grad = np.zeros_like(node.output.data)
        for t in node.inputs:
            if t.requires_grad:
                t.grad = np.zeros_like(t.data)

    loss.grad = np.ones_like(loss.data)
    reached = {id(loss)}
    for node in reversed(tape.nodes):
        if id(node.output) not in reached:
            continue
        in_grads = node.backward(node.output.grad)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            t.grad += g
            reached.add(id(t))

    # break the output <-> node cycles so activations are freed by refcounting
    for node in tape.nodes:
        node.output._node = None
        node.backward = None


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_ndim(x: Tensor, allowed: tuple, op: str) -> None:
    if x.ndim not in allowed:
        raise ShapeError(f"{op}: expected {' or '.join(map(str, allowed))}-d input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return apply_op("add", (a, b), out,
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return apply_op("sub", (a, b), out,
                    lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (the attention ``⊗``)."""
    out = a.data * b.data
    return apply_op("mul", (a, b), out,
                    lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return apply_op("scale", (a,), a.data * c, lambda g: (g * c,))


def tsum(a: Tensor) -> Tensor:
    return apply_op("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(a.shape, float(g)),))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return apply_op("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Flatten everything except the leading batch axis."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return apply_op("concat", tuple(tensors), out, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split form avoids exp overflow for large |x|
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return apply_op("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm; all-zero rows stay zero."""
    norm = np.sqrt(np.sum(x.data ** 2, axis=-1, keepdims=True))
    safe = np.maximum(norm, eps)
    y = x.data / safe
    clipped = norm < eps

    def bw(g):
        dx = (g - y * np.sum(g * y, axis=-1, keepdims=True)) / safe
        return (np.where(clipped, g / safe, dx),)

    return apply_op("l2_normalize", (x,), y, bw)


# ---------------------------------------------------------------------------
# layers


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for a vector or a ``B x D`` batch."""
    _require_ndim(x, (1, 2), "dense")
    if weight.ndim != 2 or weight.shape[1] != x.shape[-1]:
        raise ShapeError(
            f"dense: weight inner dim (axis 1) is {weight.shape[1] if weight.ndim == 2 else weight.shape}, "
            f"input feature axis has {x.shape[-1]}")
    out = x.data @ weight.data.T
    inputs = (x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"dense: bias shape {bias.shape} does not match output dim {weight.shape[0]}")
        out = out + bias.data
        inputs = (x, weight, bias)

    def bw(g):
        gx = g @ weight.data
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        grads = [gx, gw]
        if bias is not None:
            grads.append(g if g.ndim == 1 else g.sum(axis=0))
        return grads

    return apply_op("dense", inputs, out, bw)


def conv_pointwise(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1x1 convolution: ``out[o,h,w] = sum_i kernel[o,i] * x[i,h,w] + bias[o]``."""
    _require_ndim(x, (3, 4), "conv_pointwise")
    c_in = x.shape[-3]
    if kernel.ndim != 2 or kernel.shape[1] != c_in:
        raise ShapeError(f"conv_pointwise: kernel axis 1 has {kernel.shape[1:2]}, "
                         f"input channel axis has {c_in}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv_pointwise: bias axis 0 has {bias.shape}, expected ({kernel.shape[0]},)")
    # fixed tensordot contractions: einsum's path optimizer may reorder sums between processes
    out = np.moveaxis(np.tensordot(kernel.data, x.data, axes=([1], [-3])), 0, -3)
    out += bias.data[:, None, None]
    summed = [a for a in range(x.ndim) if a != x.ndim - 3]

    def bw(g):
        gx = np.moveaxis(np.tensordot(kernel.data, g, axes=([0], [-3])), 0, -3)
        gk = np.tensordot(g, x.data, axes=(summed, summed))
        gb = g.sum(axis=tuple(a for a in range(g.ndim) if a != g.ndim - 3))
        return gx, gk, gb

    return apply_op("conv_pointwise", (x, kernel, bias), out, bw)


def conv2d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded ``alpha x alpha`` convolution that keeps ``H x W``.

    ``kernel`` is ``O x C x alpha x alpha`` (O = 1 for spatial attention),
    ``bias`` has length O. Implemented as cross-correlation, as is usual for
    learned filters.
    """
    _require_ndim(x, (3, 4), "conv2d_same")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d_same: kernel must be O x C x a x a, got {kernel.shape}")
    alpha = kernel.shape[-1]
    if alpha % 2 == 0:
        raise ConfigError(f"conv2d_same: filter size must be odd, got {alpha}")
    if kernel.shape[1] != x.shape[-3]:
        raise ShapeError(f"conv2d_same: kernel axis 1 has {kernel.shape[1]}, input channel axis has {x.shape[-3]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv2d_same: bias shape {bias.shape}, expected ({kernel.shape[0]},)")
    p = alpha // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    xp = np.pad(x.data, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (alpha, alpha), axis=(-2, -1))
    out = np.moveaxis(np.tensordot(win, kernel.data, axes=([-5, -2, -1], [1, 2, 3])), -1, -3)
    out += bias.data[:, None, None]
    H, W = x.shape[-2:]
    lead = x.ndim - 3
    summed = list(range(lead)) + [lead + 1, lead + 2]

    def bw(g):
        gk = np.tensordot(g, win, axes=(summed, summed))
        gxp = np.zeros_like(xp)
        for i in range(alpha):
            for j in range(alpha):
                gxp[..., i:i + H, j:j + W] += np.einsum("...ohw,oc->...chw", g, kernel.data[:, :, i, j])
        gx = gxp[..., p:p + H, p:p + W]
        gb = g.sum(axis=tuple(a for a in range(g.ndim) if a != g.ndim - 3))
        return gx, gk, gb

    return apply_op("conv2d_same", (x, kernel, bias), out, bw)


@dataclass
class BatchNormState:
    """Running moments of one batch-norm layer (EMA with weight ``momentum`` on the old value)."""

    num_features: int
    momentum: float = 0.9
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    @property
    def initialized(self) -> bool:
        return self.running_mean is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if self.running_mean is None:
            self.running_mean = mean.copy()
            self.running_var = var.copy()
        else:
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean
            self.running_var = m * self.running_var + (1.0 - m) * var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train", eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis except axis 1 (features / channels).

    ``B x D`` batches normalize per column; ``B x C x H x W`` batches normalize
    per channel over batch and spatial positions. In ``train`` mode the biased
    batch variance is used and ``state`` is updated; ``infer`` uses the running
    moments and raises :class:`StateError` if none exist yet.
    """
    _require_ndim(x, (2, 4), "batch_norm")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, d) if x.ndim == 2 else (1, d, 1, 1)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mean, var)
    elif mode == "infer":
        if not state.initialized:
            raise StateError("batch_norm: inference requested before any training step populated running moments")
        mean, var = state.running_mean, state.running_var
    else:
        raise ConfigError(f"batch_norm: unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    n = x.data.size // d

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if mode == "train":
            gx = (inv_std.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return apply_op("batch_norm", (x, gamma, beta), out, bw)


def pool_spatial(x: Tensor, mode: str) -> Tensor:
    """Average or max over ``H x W`` per channel; output keeps ``1 x 1`` spatial axes.

    Max-pool gradient goes entirely to the first row-major argmax.
    """
    _require_ndim(x, (3, 4), "pool_spatial")
    lead = x.shape[:-2]
    flat = x.data.reshape(lead + (-1,))
    if mode == "avg":
        out = flat.mean(axis=-1)
        hw = flat.shape[-1]
        return apply_op("pool_spatial_avg", (x,), out[..., None, None],
                        lambda g: (np.broadcast_to(g / hw, x.shape).copy(),))
    if mode == "max":
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def bw(g):
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], g.reshape(lead + (1,)), axis=-1)
            return (gflat.reshape(x.shape),)

        return apply_op("pool_spatial_max", (x,), out[..., None, None], bw)
    raise ConfigError(f"pool_spatial: unknown mode {mode!r}")


def pool_channel(x: Tensor, mode: str) -> Tensor:
    """Average or max over the channel axis; output has one channel. Max ties go to the lowest channel."""
    _require_ndim(x, (3, 4), "pool_channel")
    axis = x.ndim - 3
    if mode == "avg":
        c = x.shape[axis]
        out = x.data.mean(axis=axis, keepdims=True)
        return apply_op("pool_channel_avg", (x,), out,
                        lambda g: (np.broadcast_to(g / c, x.shape).copy(),))
    if mode == "max":
        idx = x.data.argmax(axis=axis)[..., None, :, :] if axis == 1 else x.data.argmax(axis=0)[None]
        out = np.take_along_axis(x.data, idx, axis=axis)

        def bw(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=axis)
            return (gx,)

        return apply_op("pool_channel_max", (x,), out, bw)
    raise ConfigError(f"pool_channel: unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# non-differentiable numerics


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax; safe for large logits."""
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
