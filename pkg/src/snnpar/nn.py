"""Parameter containers and the handful of layers the networks need."""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Minimal module: attributes that are parameters, buffers or sub-modules are discovered by walking ``__dict__``."""

    training: bool = True
    name: str = ""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in self.__dict__.items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self._children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield (f"{prefix}.{key}" if prefix else key), value
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in getattr(self, "_buffers", {}).items():
            yield (f"{prefix}.{key}" if prefix else key), value
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def assign_names(self) -> None:
        for path, mod in self.named_modules():
            mod.name = path

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        if strict and missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for name, arr in state.items():
            if name in own:
                target = own[name]
                if target.shape != tuple(arr.shape):
                    raise ad.DimensionError(f"{name}: expected {target.shape}, got {arr.shape}")
                target.data = np.array(arr, dtype=target.dtype)
            elif name in bufs:
                bufs[name][...] = arr
            elif strict:
                raise KeyError(f"unexpected entry in state: {name}")

    def astype(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 is used for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for _, mod in self.named_modules():
            for key, buf in getattr(mod, "_buffers", {}).items():
                mod._buffers[key] = buf.astype(dtype)
        return self


# -- forward-pass instrumentation -------------------------------------------

@dataclass
class LayerCall:
    """One executed weight layer, as seen by a :class:`Probe`."""

    name: str
    kind: str  # "conv" | "linear" | "matmul"
    inputs: np.ndarray
    weight_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    stride: int = 1
    padding: int = 0
    real_input: bool = False


@dataclass
class Probe:
    calls: list[LayerCall] = field(default_factory=list)


_PROBES: list[Probe] = []


@contextlib.contextmanager
def probe():
    """Record every weight layer executed inside the block."""
    p = Probe()
    _PROBES.append(p)
    try:
        yield p
    finally:
        _PROBES.remove(p)


def record_call(call: LayerCall) -> None:
    for p in _PROBES:
        p.calls.append(call)


def probing() -> bool:
    return bool(_PROBES)


# -- layers ------------------------------------------------------------------

def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 1, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, real_input: bool = False):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(_uniform(rng, (out_ch, in_ch, kernel, kernel), 1 / math.sqrt(fan_in)),
                             requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.real_input = real_input

    def forward(self, x: Tensor) -> Tensor:
        y = ad.conv2d(x, self.weight, self.stride, self.padding)
        if _PROBES:
            record_call(LayerCall(self.name, "conv", x.data, self.weight.shape, y.shape,
                                  self.stride, self.padding, self.real_input))
        return y


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self._buffers = {"running_mean": np.zeros(channels, np.float32),
                         "running_var": np.ones(channels, np.float32)}
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.batchnorm2d(x, self.gamma, self.beta, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training, self.momentum, self.eps)


class ConvBN(Module):
    """Bias-free convolution followed by batch normalization."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, real_input: bool = False):
        self.conv = Conv2d(in_ch, out_ch, kernel, 1, padding, rng=rng, real_input=real_input)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1 / math.sqrt(in_features)
        self.weight = Tensor(_uniform(rng, (out_features, in_features), bound), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (out_features,), bound), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ad.linear(x, self.weight, self.bias)
        if _PROBES:
            record_call(LayerCall(self.name, "linear", x.data, self.weight.shape, y.shape,
                                  real_input=True))
        return y
