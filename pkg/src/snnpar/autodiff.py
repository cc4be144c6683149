"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive computes its forward result with numpy and,
when a :class:`Tape` is active and some input requires a gradient, appends a
node holding a backward closure to that tape. ``Tape.backward`` replays the
nodes in reverse execution order, which is a valid topological order because
a node is only recorded after all of its inputs exist.

Outside of a tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the tape (e.g. differentiating an unrecorded value)."""


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and type(data) in (list, tuple, int, float):
            dtype = DEFAULT_DTYPE  # Python scalars and lists; numpy float64 is kept
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

    # -- plain accessors -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar --------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; primitives executed inside the block are
    recorded on it::

        with Tape() as tape:
            loss = model(x).sum()
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

        Gradient buffers keep the dtype of the tensor they belong to.
        """
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or not any(n is loss._node for n in self.nodes):
            raise TapeError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.data.dtype)
                if gi.shape != t.shape:
                    raise DimensionError(f"gradient shape {gi.shape} != tensor shape {t.shape}")
                if t._node is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
        self.release()

    def release(self) -> None:
        """Drop recorded nodes, breaking tensor/node reference cycles so activations are freed promptly."""
        for node in self.nodes:
            node.out = None
            node.inputs = ()
            node.backward = None
        self.nodes.clear()


def grad_enabled() -> bool:
    return bool(_ACTIVE)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def make(out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a forward result and record it on the active tape when needed.

    ``backward(g)`` must return one gradient (or ``None``) per input.
    """
    t = Tensor(out)
    if _ACTIVE and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        node = _Node(t, tuple(inputs), backward)
        t._node = node
        _ACTIVE[-1].nodes.append(node)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return make(out, (a, b),
                lambda g: (_unbroadcast(g / b.data, a.shape),
                           _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / out,))


def square(a: Tensor) -> Tensor:
    return make(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1 - out),))


def log_sigmoid(a: Tensor) -> Tensor:
    """Numerically stable ``log(sigmoid(a))``."""
    x = a.data
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    return make(out, (a,), lambda g: (g * _sigmoid(-x),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


# -- reductions and shape ----------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    return make(np.broadcast_to(a.data, shape).copy(), (a,),
                lambda g: (_unbroadcast(g, a.shape),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape [B, in] and ``weight`` [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make(out, inputs, backward)


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation without bias. ``x``: [B, C, H, W], ``w``: [O, C, kh, kw]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    w2 = w.data.reshape(O, -1)

    if kh == kw == 1 and stride == 1 and padding == 0:
        x3 = x.data.reshape(B, C, H * W)
        out = np.matmul(w2, x3).reshape(B, O, H, W)

        def backward(g):
            g3 = g.reshape(B, O, H * W)
            dx = np.matmul(w2.T, g3).reshape(x.shape)
            dw = np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            return dx, dw

        return make(out, (x, w), backward)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    out = (cols @ w2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ w2).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros(xp.shape, dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        return dx, dw

    return make(out, (x, w), backward)


def maxpool2d(x: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling with floor output size; ties resolve to the first element in scan order."""
    stride = k if stride is None else stride
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    if k > H or k > W:
        raise DimensionError(f"maxpool2d: window {k} larger than input {H}x{W}")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(B, C, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros(x.shape, dtype=x.data.dtype)
        for i in range(k):
            for j in range(k):
                sel = arg == i * k + j
                dx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += g * sel
        return (dx,)

    return make(np.ascontiguousarray(out), (x,), backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization of [B, C, H, W].

    In training mode the batch statistics normalize the input and the running
    statistics are updated in place (unbiased variance, as is conventional).
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batchnorm2d: input {x.shape} has {x.shape[1] if x.ndim > 1 else '?'} channels, "
            f"gamma {gamma.shape}, beta {beta.shape}")
    B, C = x.shape[:2]
    dt = x.dtype
    x3 = np.ascontiguousarray(x.data.reshape(B, C, -1))
    n = x3.shape[0] * x3.shape[2]
    if training:
        mu, var = _kernels.bn_stats(x3)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var.astype(np.float64) + eps)).astype(dt)
    xhat, out = _kernels.bn_apply(x3, mu.astype(dt), inv, gamma.data.astype(dt), beta.data.astype(dt))
    out = out.reshape(x.shape)

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(B, C, -1))
        dx, dgamma, dbeta = _kernels.bn_backward(g3, xhat, (gamma.data * inv).astype(dt), training)
        return dx.reshape(x.shape), dgamma.astype(dt), dbeta.astype(dt)

    return make(out, (x, gamma, beta), backward)


# -- validation harness ------------------------------------------------------

def gradient(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    """Analytic gradient of scalar ``f`` at ``x`` via the tape."""
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
    tape.backward(y)
    return np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
                      n_samples: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The check runs in float64. ``f`` must be deterministic and smooth near
    ``x``; discontinuous functions (e.g. hard spikes) are outside its
    contract. Coordinates are sampled without replacement when
    ``n_samples`` is smaller than ``x.size``.
    """
    x64 = Tensor(np.array(x.data, dtype=np.float64))
    analytic = gradient(f, x64).reshape(-1)
    flat = x64.data.reshape(-1)
    idx = np.arange(flat.size)
    if n_samples is not None and n_samples < flat.size:
        idx = np.random.default_rng(seed).choice(flat.size, n_samples, replace=False)
    worst = 0.0
    for i in idx:
        numeric = _central_difference(f, x64, int(i), eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst


def _central_difference(f, x: Tensor, i: int, eps: float) -> float:
    flat = x.data.reshape(-1)
    old = flat[i]
    flat[i] = old + eps
    hi = float(f(Tensor(x.data.copy())).data)
    flat[i] = old - eps
    lo = float(f(Tensor(x.data.copy())).data)
    flat[i] = old
    return (hi - lo) / (2 * eps)

