"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array whose last two axes are (time, feature); any
leading axes are batch axes and broadcast through every op. Each op that
touches a ``requires_grad`` input records a node carrying a monotonically
increasing sequence number, so :func:`backward` can replay the recorded
tape in exact reverse execution order.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

_SEQ = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate ops without recording them on the tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_SEQ)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        raise TypeError("use slice_time / pick; arbitrary indexing is not differentiable here")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite value produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


mul_elementwise = mul


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        # rows of every batch element share one weight: a single GEMM
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(*a.shape[:-1], b.shape[-1])
    else:
        try:
            out = np.matmul(a.data, b.data)
        except ValueError as exc:
            raise DimensionError(f"matmul: {exc}") from None

    def bw(g):
        ga = gb = None
        if b.ndim == 2:
            if a.requires_grad:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "permute")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ W + b applied to every row."""
    out = matmul(x, W)
    return out if b is None else add(out, b)


def concat_time(*xs: Tensor) -> Tensor:
    return _concat(xs, axis=-2, op="concat_time")


def concat_feat(*xs: Tensor) -> Tensor:
    return _concat(xs, axis=-1, op="concat_feat")


def _concat(xs: Sequence[Tensor], axis: int, op: str) -> Tensor:
    if not xs:
        raise DimensionError(f"{op}: nothing to concatenate")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"{op}: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(xs), bw, op)


def slice_time(x: Tensor, start: int, stop: int) -> Tensor:
    t = x.shape[-2]
    if not 0 <= start < stop <= t:
        raise DimensionError(f"slice_time: [{start}, {stop}) outside length {t}")

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., start:stop, :] = g
        return (full,)

    return _make(x.data[..., start:stop, :], (x,), bw, "slice_time")


def pad_time(x: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad along the time axis."""
    if before < 0 or after < 0:
        raise DimensionError("pad_time: negative padding")
    widths = [(0, 0)] * x.ndim
    widths[-2] = (before, after)
    t = x.shape[-2]
    out = np.pad(x.data, widths)
    return _make(out, (x,), lambda g: (g[..., before:before + t, :],), "pad_time")


def take_time(x: Tensor, index) -> Tensor:
    """Gather time steps ``index`` (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)
    t = x.shape[-2]
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= t)):
        raise DimensionError(f"take_time: indices out of range for length {t}")

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(full, (Ellipsis, idx, slice(None)), g)
        return (full,)

    return _make(x.data[..., idx, :], (x,), bw, "take_time")


def pick(x: Tensor, index) -> Tensor:
    """Select x[..., i, index[i]] from a (batch, classes) tensor, one entry per row."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"pick: need (batch, classes) and (batch,), got {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[rows, idx] = g
        return (full,)

    return _make(x.data[rows, idx], (x,), bw, "pick")


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def avg_pool_time(x: Tensor) -> Tensor:
    """Arithmetic mean over the time axis, keeping it as length 1."""
    return mean(x, axis=-2, keepdims=True)


# ---------------------------------------------------------------------------
# nonlinearities


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` computes log(max(x, floor))."""
    if floor is None:
        if (x.data <= 0).any():
            raise NumericalError("log of non-positive value")
        return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")
    clipped = np.maximum(x.data, floor)
    live = x.data > floor
    return _make(np.log(clipped), (x,), lambda g: (np.where(live, g / clipped, 0.0),), "log")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # branchwise form never exponentiates a large positive number
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """max(0, x) + slope * min(0, x), slope broadcast over the last axis."""
    pos = x.data > 0
    neg_part = np.where(pos, 0.0, x.data)
    out = np.where(pos, x.data, slope.data * x.data)

    def bw(g):
        gx = np.where(pos, g, g * slope.data)
        gs = _unbroadcast(g * neg_part, slope.shape) if slope.requires_grad else None
        return gx, gs

    return _make(out, (x, slope), bw, "prelu")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), bw, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax_rows")


def layer_norm_rows(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
                    eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean and unit variance, then apply gain/bias."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gh = g
        ggain = gbias = None
        if gain is not None:
            gh = g * gain.data
            if gain.requires_grad:
                ggain = _unbroadcast(g * xhat, gain.shape)
        if bias is not None and bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        gx = inv / d * (d * gh - gh.sum(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
        return gx, ggain, gbias

    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = (x, gain if gain is not None else _NONE, bias if bias is not None else _NONE)
    return _make(out, parents, bw, "layer_norm_rows")


# ---------------------------------------------------------------------------
# convolution


def conv_output_length(t: int, ksize: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (t_out, pad_left, pad_right) for a time-axis convolution."""
    if stride < 1 or ksize < 1:
        raise DimensionError("conv1d_time: stride and ksize must be >= 1")
    if padding == "same":
        total = ksize - 1
    elif padding == "valid":
        total = 0
    else:
        raise DimensionError(f"conv1d_time: unknown padding {padding!r}")
    left = total // 2
    t_out = (t + total - ksize) // stride + 1
    if t_out < 1:
        raise DimensionError(f"conv1d_time: output length {t_out} < 1 (t={t}, ksize={ksize})")
    return t_out, left, total - left


def conv1d_time(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1,
                padding: str = "same") -> Tensor:
    """Convolve along time, features as channels.

    ``kernels`` has shape (ksize, c_in, c_out); output row j sums
    ``x_pad[j*stride + i] @ kernels[i]`` over kernel taps i.
    """
    ksize, c_in, c_out = kernels.shape
    if x.shape[-1] != c_in:
        raise DimensionError(f"conv1d_time: input has {x.shape[-1]} channels, kernel expects {c_in}")
    t = x.shape[-2]
    t_out, left, right = conv_output_length(t, ksize, stride, padding)
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    xp = np.pad(x.data, widths)
    taps = np.arange(t_out)[:, None] * stride + np.arange(ksize)[None, :]  # (t_out, ksize)
    cols = xp[..., taps, :].reshape(*x.shape[:-2], t_out, ksize * c_in)
    kmat = kernels.data.reshape(ksize * c_in, c_out)
    out = cols @ kmat
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (g @ kmat.T).reshape(*x.shape[:-2], t_out, ksize, c_in)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            span = stride * (t_out - 1) + 1
            for i in range(ksize):
                # one tap never hits the same padded row twice
                gxp[..., i:i + span:stride, :] += gcols[..., i, :]
            gx = gxp[..., left:left + t, :]
        if kernels.requires_grad:
            flat_c = cols.reshape(-1, ksize * c_in)
            gk = (flat_c.T @ g.reshape(-1, c_out)).reshape(kernels.shape)
        if bias is not None and bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gk, gb

    parents = (x, kernels, bias if bias is not None else _NONE)
    return _make(out, parents, bw, "conv1d_time")


# placeholder parent for optional arguments; never requires grad
_NONE = Tensor(np.zeros(()))


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Recorded ops reachable from a scalar loss, in execution order."""

    def __init__(self, root: Tensor):
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._seq)
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def reverse(self) -> Iterable[Tensor]:
        return reversed(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> Tape:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every reachable tensor.

    ``params`` that the loss does not depend on receive zero gradients.
    A loss may be backpropagated only once; recompute it to go again.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward already ran on this loss; recompute the forward pass first")
    loss._consumed = True
    tape = Tape(loss)
    if tape.nodes:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in tape.reverse():
        if node._backward is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
        if node is not loss:
            # free closures over intermediate buffers
            node._backward = None
            node._parents = ()
    loss._backward = None
    loss._parents = ()
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return tape
