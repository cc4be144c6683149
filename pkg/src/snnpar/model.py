"""Spiking transformer student: tokenizer, spike-driven blocks and a linear head.

Activations are laid out as ``[T * B, C, H, W]`` with time as the outermost
factor of the leading axis, so convolutions and batch norm treat every time
step as extra batch entries with shared weights. Inside the blocks the
token grid is kept 2-D and token-wise linear maps are 1x1 convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .neuron import LifParams, MultiStepLIF, SurrogateSpec
from .nn import ConvBN, Linear, Module, LayerCall, probing, record_call


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    image_height: int = 64
    image_width: int = 32
    in_channels: int = 3
    embed_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 2
    mlp_ratio: int = 4
    time_steps: int = 4
    num_attributes: int = 8
    attention_scale: float = 0.125
    tokenizer_stages: int = 2
    tokenizer_widths: tuple[int, ...] = ()
    tau_m: float = 2.0
    u_rest: float = 0.0
    u_th: float = 1.0
    u_r: float = 0.0
    resistance: float = 1.0
    surrogate: str = "sigmoid"
    surrogate_width: float = 4.0
    seed: int = 0

    def __post_init__(self):
        self.tokenizer_widths = tuple(int(w) for w in self.tokenizer_widths)
        self.validate()

    def validate(self) -> None:
        positive = ("image_height", "image_width", "in_channels", "embed_dim", "num_heads",
                    "mlp_ratio", "time_steps", "num_attributes")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_blocks < 0 or self.tokenizer_stages < 0:
            raise ConfigError("num_blocks and tokenizer_stages must be non-negative")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.tokenizer_widths and len(self.tokenizer_widths) != self.tokenizer_stages + 1:
            raise ConfigError("tokenizer_widths needs one entry for the stem plus one per stage")
        if self.widths[-1] != self.embed_dim:
            raise ConfigError("the last tokenizer width must equal embed_dim")
        if min(self.widths) <= 0:
            raise ConfigError(f"tokenizer widths must be positive, got {self.widths}")
        if min(self.token_grid) < 1:
            raise ConfigError(f"{self.tokenizer_stages} downsampling stages leave no tokens "
                              f"for a {self.image_height}x{self.image_width} image")

    @property
    def widths(self) -> tuple[int, ...]:
        """Channel widths of the stem followed by each downsampling stage."""
        if self.tokenizer_widths:
            return self.tokenizer_widths
        S = self.tokenizer_stages
        return tuple(max(1, self.embed_dim >> (S - i)) for i in range(S + 1))

    @property
    def token_grid(self) -> tuple[int, int]:
        h, w = self.image_height, self.image_width
        for _ in range(self.tokenizer_stages):
            h, w = h // 2, w // 2
        return h, w

    @property
    def num_tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.embed_dim

    def lif(self) -> LifParams:
        return LifParams(self.tau_m, self.u_rest, self.u_th, self.u_r, self.resistance)

    def surrogate_spec(self) -> SurrogateSpec:
        return SurrogateSpec(self.surrogate, self.surrogate_width)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class SPE(Module):
    """Spiking patch embedding: spikes, then ConvBN."""

    def __init__(self, cfg: ModelConfig, in_ch: int, out_ch: int, kernel: int = 1,
                 rng: np.random.Generator | None = None):
        self.lif = MultiStepLIF(cfg.time_steps, cfg.lif(), cfg.surrogate_spec())
        self.convbn = ConvBN(in_ch, out_ch, kernel, kernel // 2, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.convbn(self.lif(x))


class SPED(SPE):
    """Spiking patch embedding with a 2x2 stride-2 max pool between spikes and ConvBN."""

    def forward(self, x: Tensor) -> Tensor:
        return self.convbn(ad.maxpool2d(self.lif(x), 2, 2))


def attention_core(q: Tensor, k: Tensor, v: Tensor, num_heads: int, name: str = "attn") -> Tensor:
    """Unscaled ``Q K^T V`` per head for channel-major tokens [TB, D, h, w].

    The product is associated as ``Q (K^T V)``; with binary operands every
    entry is a non-negative integer either way.
    """
    TB, D, h, w = q.shape
    N, d = h * w, D // num_heads
    qh = q.reshape(TB, num_heads, d, N).transpose(0, 1, 3, 2)
    kt = k.reshape(TB, num_heads, d, N)
    vh = v.reshape(TB, num_heads, d, N).transpose(0, 1, 3, 2)
    kv = ad.matmul(kt, vh)
    if probing():
        record_call(LayerCall(f"{name}.kv", "matmul", kt.data, (N, d), kv.shape))
    out = ad.matmul(qh, kv)
    if probing():
        record_call(LayerCall(f"{name}.qkv", "matmul", qh.data, (d, d), out.shape))
    return out.transpose(0, 1, 3, 2).reshape(TB, D, h, w)


class SpikingSelfAttention(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D, T = cfg.embed_dim, cfg.time_steps
        lif, sg = cfg.lif(), cfg.surrogate_spec()
        self.num_heads = cfg.num_heads
        self.scale = cfg.attention_scale
        self.lif_in = MultiStepLIF(T, lif, sg)
        self.q = ConvBN(D, D, rng=rng)
        self.k = ConvBN(D, D, rng=rng)
        self.v = ConvBN(D, D, rng=rng)
        self.lif_q = MultiStepLIF(T, lif, sg)
        self.lif_k = MultiStepLIF(T, lif, sg)
        self.lif_v = MultiStepLIF(T, lif, sg)
        self.lif_attn = MultiStepLIF(T, lif, sg)
        self.proj = ConvBN(D, D, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        xs = self.lif_in(x)
        q = self.lif_q(self.q(xs))
        k = self.lif_k(self.k(xs))
        v = self.lif_v(self.v(xs))
        a = attention_core(q, k, v, self.num_heads, self.name) * self.scale
        return self.proj(self.lif_attn(a))


class SpikingMLP(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.fc1 = SPE(cfg, cfg.embed_dim, cfg.hidden_dim, rng=rng)
        self.fc2 = SPE(cfg, cfg.hidden_dim, cfg.embed_dim, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x))


class Block(Module):
    """Spike-driven residual block over the real-valued residual stream."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = SpikingSelfAttention(cfg, rng)
        self.mlp = SpikingMLP(cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = x + self.attn(x)
        return y + self.mlp(y)


class Spikingformer(Module):
    """Images [B, C, H, W] in [0, 1] to attribute logits [B, M].

    The stem ConvBN is the encoder: it is the single layer that sees real
    pixel values, and since the image is presented identically at every
    step it is evaluated once and replicated over the T steps.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        w = cfg.widths
        self.stem = ConvBN(cfg.in_channels, w[0], 3, 1, rng=rng, real_input=True)
        self.stages = [SPED(cfg, w[i], w[i + 1], 3, rng=rng) for i in range(cfg.tokenizer_stages)]
        self.blocks = [Block(cfg, rng) for _ in range(cfg.num_blocks)]
        self.head = Linear(cfg.embed_dim, cfg.num_attributes, rng=rng)
        self.assign_names()

    def set_soft(self, soft: bool = True) -> None:
        for _, mod in self.named_modules():
            if isinstance(mod, MultiStepLIF):
                mod.soft = soft

    def tokenize(self, images) -> Tensor:
        cfg = self.cfg
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.image_height, cfg.image_width):
            raise ConfigError(f"expected images [B, {cfg.in_channels}, {cfg.image_height}, "
                              f"{cfg.image_width}], got {x.shape}")
        s = self.stem(x)
        B = s.shape[0]
        T = cfg.time_steps
        s = ad.broadcast_to(s.reshape((1,) + s.shape), (T,) + s.shape).reshape((T * B,) + s.shape[1:])
        for stage in self.stages:
            s = stage(s)
        return s

    def features(self, images) -> Tensor:
        """Student visual features: the last residual stream averaged over tokens and time."""
        x = self.tokenize(images)
        for blk in self.blocks:
            x = blk(x)
        TB, D = x.shape[:2]
        T = self.cfg.time_steps
        return x.reshape(T, TB // T, D, -1).mean(axis=(0, 3))

    def forward(self, images) -> tuple[Tensor, Tensor]:
        feats = self.features(images)
        return self.head(feats), feats


def param_count(cfg: ModelConfig, breakdown: bool = False):
    """Learnable scalars (conv weights, BN affine, FC) from closed forms."""
    w = cfg.widths
    D, H, M = cfg.embed_dim, cfg.hidden_dim, cfg.num_attributes

    def convbn(cin, cout, k):
        return cin * cout * k * k + 2 * cout

    parts = {
        "stem": convbn(cfg.in_channels, w[0], 3),
        "tokenizer": sum(convbn(w[i], w[i + 1], 3) for i in range(cfg.tokenizer_stages)),
        "blocks": cfg.num_blocks * (4 * convbn(D, D, 1) + convbn(D, H, 1) + convbn(H, D, 1)),
        "head": D * M + M,
    }
    total = sum(parts.values())
    return (total, parts) if breakdown else total
