"""Spike statistics, synaptic-operation counts and an energy estimate.

A layer fed binary spikes performs one accumulate (AC) per nonzero input
tap; a layer fed real values performs one multiply-accumulate (MAC) per tap.
The comparison network is the same architecture run once with real
activations, so every tap is a MAC. Taps that land on zero padding are not
operations in either tally.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelConfig
from .nn import LayerCall, Module, probe


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = 4.6  # pJ, 45nm
    e_ac: float = 0.9

    def __post_init__(self):
        if not self.e_mac > self.e_ac > 0:
            raise ValueError(f"need e_mac > e_ac > 0, got {self.e_mac}, {self.e_ac}")


@dataclass
class LayerStats:
    name: str
    kind: str
    real_input: bool
    spikes: int          # nonzero input elements (all of them for real input)
    elements: int
    sops: int            # accumulates; 0 for real-input layers
    macs: int            # MACs if the layer ran once on dense input
    encoder_macs: int    # MACs actually spent on real-valued input

    @property
    def firing_rate(self) -> float:
        return self.spikes / self.elements if self.elements else 0.0


@dataclass
class SpikeStats:
    layers: list[LayerStats] = field(default_factory=list)

    @property
    def sops(self) -> int:
        return sum(l.sops for l in self.layers)

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def encoder_macs(self) -> int:
        return sum(l.encoder_macs for l in self.layers)

    def mean_firing_rate(self) -> float:
        spk = [l for l in self.layers if not l.real_input]
        total = sum(l.elements for l in spk)
        return sum(l.spikes for l in spk) / total if total else 0.0


def conv_taps(x: np.ndarray, kernel_hw: tuple[int, int], stride: int, padding: int) -> int:
    """Sum over output positions of the nonzero inputs in each receptive field (one output channel)."""
    nz = (np.asarray(x) != 0).astype(np.float64)
    C = nz.shape[1]
    ones = np.ones((1, C) + tuple(kernel_hw))
    if kernel_hw == (1, 1) and stride == 1 and padding == 0:
        return int(nz.sum())
    return int(round(ad.conv2d(Tensor(nz), Tensor(ones), stride, padding).data.sum()))


def _call_stats(call: LayerCall, time_steps: int) -> LayerStats:
    x = call.inputs
    nnz = int(np.count_nonzero(x))
    if call.kind == "conv":
        O, _, kh, kw = call.weight_shape
        dense = conv_taps(np.ones(x.shape[1:])[None], (kh, kw), call.stride, call.padding) * O * x.shape[0]
        active = conv_taps(x, (kh, kw), call.stride, call.padding) * O
    else:
        # every row of x meets every output column: linear [B, in] x [in, out], matmul left operand
        cols = call.weight_shape[0] if call.kind == "linear" else call.weight_shape[-1]
        dense = x.size * cols
        active = nnz * cols
    if call.real_input:
        # evaluated once per image, so this is also the single-pass MAC count
        return LayerStats(call.name, call.kind, True, nnz, x.size, 0, dense, dense)
    # spike layers see T*B entries on the leading axis; the dense network runs once
    return LayerStats(call.name, call.kind, False, nnz, x.size, active, dense // time_steps, 0)


def stats_from_calls(calls: list[LayerCall], time_steps: int) -> SpikeStats:
    return SpikeStats([_call_stats(c, time_steps) for c in calls])


def count_sops(model: Module, images, time_steps: int | None = None) -> SpikeStats:
    """Run one instrumented inference pass and tally per-layer SOPs and MACs."""
    T = time_steps if time_steps is not None else model.cfg.time_steps
    was_training = model.training
    model.eval()
    try:
        with probe() as p:
            model(images)
    finally:
        model.train(was_training)
    return stats_from_calls(p.calls, T)


@dataclass
class EnergyEstimate:
    snn_pj: float
    ann_pj: float

    @property
    def ratio(self) -> float:
        return self.snn_pj / self.ann_pj if self.ann_pj else float("nan")


def estimate_energy(sops: int, macs: int, encoder_macs: int, em: EnergyModel = EnergyModel()) -> EnergyEstimate:
    return EnergyEstimate(em.e_ac * sops + em.e_mac * encoder_macs, em.e_mac * macs)


def _axis_taps(n: int, k: int, stride: int, padding: int) -> int:
    out = (n + 2 * padding - k) // stride + 1
    return sum(min(o * stride - padding + k, n) - max(o * stride - padding, 0) for o in range(out))


def conv_macs(cin: int, cout: int, k: int, h: int, w: int, stride: int = 1, padding: int = 0) -> int:
    """MACs of a dense conv, counting only taps that land inside the input."""
    return cin * cout * _axis_taps(h, k, stride, padding) * _axis_taps(w, k, stride, padding)


def dense_mac_count(cfg: ModelConfig, batch: int = 1) -> int:
    """Single-pass MACs of the architecture with real activations."""
    w = cfg.widths
    H, W = cfg.image_height, cfg.image_width
    total = conv_macs(cfg.in_channels, w[0], 3, H, W, padding=1)
    for i in range(cfg.tokenizer_stages):
        H, W = H // 2, W // 2
        total += conv_macs(w[i], w[i + 1], 3, H, W, padding=1)
    D, Hd, N = cfg.embed_dim, cfg.hidden_dim, cfg.num_tokens
    d = D // cfg.num_heads
    per_block = 4 * D * D * N + 2 * D * Hd * N + cfg.num_heads * 2 * N * d * d
    total += cfg.num_blocks * per_block + D * cfg.num_attributes
    return total * batch


def energy_report(stats: SpikeStats, em: EnergyModel = EnergyModel()) -> dict:
    est = estimate_energy(stats.sops, stats.macs, stats.encoder_macs, em)
    return {
        "energy_model": asdict(em),
        "layers": [{"name": l.name, "kind": l.kind, "real_input": l.real_input, "sops": l.sops,
                    "macs": l.macs, "encoder_macs": l.encoder_macs, "firing_rate": l.firing_rate}
                   for l in stats.layers],
        "totals": {"sops": stats.sops, "macs": stats.macs, "encoder_macs": stats.encoder_macs,
                   "mean_firing_rate": stats.mean_firing_rate()},
        "snn_pj": est.snn_pj,
        "ann_pj": est.ann_pj,
        "ratio": est.ratio,
    }


def write_energy_report(path: str | os.PathLike, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
