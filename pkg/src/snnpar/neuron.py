"""Leaky integrate-and-fire neurons unrolled over discrete time steps.

The membrane follows a forward-Euler step of the leaky integrator with unit
step size::

    h = u + (1 / tau_m) * (-(u - u_rest) + R * x)

A spike is emitted where ``h >= u_th`` and the membrane of spiking elements is
hard-reset to ``u_r``. Training uses a surrogate derivative in place of the
Heaviside step; gradients do not flow through the reset (the spike is treated
as a constant there).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Module


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 2.0
    u_rest: float = 0.0
    u_th: float = 1.0
    u_r: float = 0.0
    R: float = 1.0

    def __post_init__(self):
        if not self.tau_m > 0:
            raise ValueError(f"tau_m must be positive, got {self.tau_m}")
        if not self.u_r < self.u_th:
            raise ValueError(f"reset potential {self.u_r} must lie below threshold {self.u_th}")
        if not self.u_rest <= self.u_th:
            raise ValueError(f"resting potential {self.u_rest} exceeds threshold {self.u_th}")


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "sigmoid"
    width: float = 4.0

    def __post_init__(self):
        if self.kind not in SURROGATES:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; choose from {sorted(SURROGATES)}")
        if not self.width > 0:
            raise ValueError(f"surrogate width must be positive, got {self.width}")


@dataclass
class LifState:
    u: np.ndarray
    t: int = 0

    @classmethod
    def resting(cls, shape, p: LifParams, dtype=np.float32) -> "LifState":
        return cls(np.full(shape, p.u_rest, dtype=dtype), 0)


def _sig(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


def _sig_deriv(z):
    e = np.exp(-np.abs(z))
    return e / ((1 + e) * (1 + e))


# Each entry: (smooth step, its derivative), both as functions of (v, width)
# with v = u - u_th.
SURROGATES = {
    "sigmoid": (lambda v, w: _sig(w * v),
                lambda v, w: _sig_deriv(w * v) * w),
    "arctan": (lambda v, w: np.arctan(0.5 * math.pi * w * v) / math.pi + 0.5,
               lambda v, w: 0.5 * w / (1 + (0.5 * math.pi * w * v) ** 2)),
    "rectangular": (lambda v, w: np.clip(w * v + 0.5, 0.0, 1.0),
                    lambda v, w: w * (np.abs(v) < 0.5 / w)),
}


def surrogate_backward(u_pre_reset: np.ndarray, p: LifParams, s: SurrogateSpec) -> np.ndarray:
    """Surrogate of d(spike)/d(u) evaluated at the pre-reset membrane."""
    v = np.asarray(u_pre_reset) - p.u_th
    return SURROGATES[s.kind][1](v, s.width).astype(np.result_type(u_pre_reset, np.float32))


def charge(u: np.ndarray, x: np.ndarray, p: LifParams) -> np.ndarray:
    return u + (1.0 / p.tau_m) * (-(u - p.u_rest) + p.R * x)


def _step(u: np.ndarray, x_t: np.ndarray, p: LifParams):
    h = charge(u, x_t, p)
    spikes = (h >= p.u_th).astype(h.dtype)
    return h, spikes, np.where(spikes > 0, np.asarray(p.u_r, dtype=h.dtype), h)


def lif_step(state: LifState, x_t: np.ndarray, p: LifParams) -> tuple[np.ndarray, LifState]:
    """Advance every neuron one step; returns binary spikes and the post-reset state."""
    x_t = np.asarray(x_t)
    if x_t.shape != state.u.shape:
        raise DimensionError(f"lif_step: input {x_t.shape} does not match membrane {state.u.shape}")
    _, spikes, u = _step(state.u, x_t, p)
    return spikes, LifState(u, state.t + 1)


def multistep_lif(x: Tensor, p: LifParams = LifParams(), s: SurrogateSpec = SurrogateSpec(),
                  soft: bool = False) -> Tensor:
    """Run LIF dynamics over the leading time axis of ``x`` ([T, ...]).

    The membrane starts at ``u_rest`` for every call. With ``soft=True`` the
    Heaviside step is replaced by the surrogate's smooth step in the forward
    pass as well, and the backward pass is the exact derivative of that
    smooth network (reset path included), which makes finite-difference
    checks meaningful.
    """
    if x.ndim < 1 or x.shape[0] == 0:
        raise ValueError("multistep_lif needs at least one time step")
    T = x.shape[0]
    xs = x.data
    dt = xs.dtype
    step_fn, deriv_fn = SURROGATES[s.kind]
    decay = 1.0 - 1.0 / p.tau_m
    gain = p.R / p.tau_m

    if not soft:
        c = dt.type
        flat = np.ascontiguousarray(xs.reshape(T, -1))
        out, v = _kernels.lif_forward(flat, c(1.0 / p.tau_m), c(p.u_rest), c(p.u_th), c(p.u_r), c(p.R))

        def hard_backward(g):
            sg = deriv_fn(v, c(s.width)).astype(dt, copy=False)
            dx = _kernels.lif_backward(np.ascontiguousarray(g.reshape(T, -1)), out, sg,
                                       c(decay), c(gain))
            return (dx.reshape(xs.shape),)

        return ad.make(out.reshape(xs.shape), (x,), hard_backward)

    pre = np.empty_like(xs)
    out = np.empty_like(xs)
    u = np.full(xs.shape[1:], p.u_rest, dtype=dt)
    for t in range(T):
        h = charge(u, xs[t], p)
        spk = step_fn(h - p.u_th, s.width).astype(dt)
        u = h * (1 - spk) + p.u_r * spk
        pre[t] = h
        out[t] = spk

    def soft_backward(g):
        sg = deriv_fn(pre - p.u_th, s.width).astype(dt, copy=False)
        dx = np.empty_like(xs)
        du = np.zeros(xs.shape[1:], dtype=dt)
        for t in range(T - 1, -1, -1):
            dh = g[t] * sg[t] + du * ((1 - out[t]) + (p.u_r - pre[t]) * sg[t])
            dx[t] = dh * gain
            du = dh * decay
        return (dx,)

    return ad.make(out, (x,), soft_backward)


def soft_forward(x: Tensor, p: LifParams = LifParams(), s: SurrogateSpec = SurrogateSpec()) -> Tensor:
    """Smooth stand-in for :func:`multistep_lif` used by gradient checks."""
    return multistep_lif(x, p, s, soft=True)


class MultiStepLIF(Module):
    """Spiking activation over inputs laid out as [T * B, ...]."""

    def __init__(self, time_steps: int, params: LifParams = LifParams(),
                 surrogate: SurrogateSpec = SurrogateSpec()):
        if time_steps < 1:
            raise ValueError("time_steps must be at least 1")
        self.time_steps = time_steps
        self.params = params
        self.surrogate = surrogate
        self.soft = False

    def forward(self, x: Tensor) -> Tensor:
        T = self.time_steps
        shape = x.shape
        y = multistep_lif(x.reshape((T, shape[0] // T) + shape[1:]), self.params, self.surrogate, self.soft)
        return y.reshape(shape)
