"""Finite-difference check of the whole training objective w.r.t. model parameters.

The network runs in soft mode (smooth spikes in the forward pass) and in
float64, so the tape gradient is the exact derivative of the evaluated
function and central differences can confirm it coordinate by coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distill as kd
from .autodiff import Tape, Tensor
from .model import ModelConfig, Spikingformer

TINY = ModelConfig(image_height=4, image_width=4, embed_dim=8, num_heads=2, num_blocks=1,
                   mlp_ratio=2, time_steps=2, num_attributes=3, tokenizer_stages=1)


@dataclass
class CoordResult:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        # the floor keeps coordinates whose true derivative is ~0 from reporting pure rounding noise
        return abs(self.analytic - self.numeric) / max(abs(self.analytic) + abs(self.numeric), 1e-8)


@dataclass
class GradCheckReport:
    results: list[CoordResult] = field(default_factory=list)
    tolerance: float = 1e-3

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.results), default=0.0)

    @property
    def passed(self) -> bool:
        return len(self.results) > 0 and self.max_rel_error < self.tolerance

    def per_layer_worst(self) -> dict[str, CoordResult]:
        worst: dict[str, CoordResult] = {}
        for r in self.results:
            layer = r.param.rsplit(".", 1)[0]
            if layer not in worst or r.rel_error > worst[layer].rel_error:
                worst[layer] = r
        return worst

    def to_text(self) -> str:
        lines = [f"{'layer':40s} {'worst coordinate':28s} {'analytic':>13s} {'numeric':>13s} {'rel err':>10s}"]
        for layer, r in self.per_layer_worst().items():
            coord = f"{r.param.rsplit('.', 1)[1]}{list(r.index)}"
            lines.append(f"{layer:40s} {coord:28s} {r.analytic:13.6e} {r.numeric:13.6e} {r.rel_error:10.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"sampled {len(self.results)} parameters, max relative error "
                     f"{self.max_rel_error:.3e} (tolerance {self.tolerance:g}): {verdict}")
        return "\n".join(lines)


class _Objective:
    """Training loss (weighted CE + both distillation terms) on a fixed random batch."""

    def __init__(self, cfg: ModelConfig, batch: int, seed: int, teacher_dim: int = 5):
        rng = np.random.default_rng(seed)
        self.model = Spikingformer(cfg).astype(np.float64)
        self.model.set_soft(True)
        self.projection = kd.Projection(cfg.embed_dim, teacher_dim, seed).astype(np.float64)
        M = cfg.num_attributes
        self.images = rng.random((batch, cfg.in_channels, cfg.image_height, cfg.image_width))
        self.labels = (rng.random((batch, M)) < 0.5).astype(np.float64)
        self.teacher_logits = rng.normal(size=(batch, M)) * 2
        self.teacher_feat = rng.normal(size=(batch, teacher_dim))
        self.text = rng.normal(size=(M, teacher_dim))
        self.weights = kd.AttrWeights.from_ratios(rng.uniform(0.2, 0.8, size=M))
        # BN normalizes with batch statistics in training mode, which is the mode being trained
        self.model.train()
        self.dcfg = kd.DistillConfig()

    def params(self) -> dict[str, Tensor]:
        out = {f"model.{k}": p for k, p in self.model.named_parameters()}
        out.update({f"projection.{k}": p for k, p in self.projection.named_parameters()})
        return out

    def __call__(self) -> Tensor:
        logits, feats = self.model(self.images)
        ce = kd.weighted_bce(logits, self.labels, self.weights)
        rk = kd.resp_kd(logits, self.teacher_logits, self.dcfg.temperature)
        fk = kd.feat_kd(feats, self.teacher_feat, self.text, self.projection, self.dcfg.feat_temperature)
        return kd.total_loss(ce, rk, fk, self.dcfg)


def _sample(params: dict[str, Tensor], n: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """At least one coordinate per tensor, the rest uniformly over all scalars."""
    names = list(params)
    picks = {(k, int(rng.integers(params[k].size))) for k in names}
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    n = min(n, total)
    while len(picks) < n:
        flat = int(rng.integers(total))
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.add((names[j], flat - int(offsets[j])))
    return sorted(picks, key=lambda kv: (names.index(kv[0]), kv[1]))


def check_gradients(cfg: ModelConfig = TINY, n_samples: int = 256, batch: int = 3, seed: int = 0,
                    eps: float = 1e-6, tolerance: float = 1e-3) -> GradCheckReport:
    obj = _Objective(cfg, batch, seed)
    params = obj.params()
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = obj()
    tape.backward(loss)
    rep = GradCheckReport(tolerance=tolerance)
    for name, i in _sample(params, n_samples, np.random.default_rng(seed)):
        p = params[name]
        flat = p.data.reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        hi = obj().item()
        flat[i] = old - eps
        lo = obj().item()
        flat[i] = old
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        idx = tuple(int(v) for v in np.unravel_index(i, p.shape))
        rep.results.append(CoordResult(name, idx, analytic, (hi - lo) / (2 * eps)))
    return rep
