"""Small networks and a brute-force operation counter shared by energy tests."""
import numpy as np

from snnpar import autodiff as ad
from snnpar.autodiff import Tensor
from snnpar.neuron import MultiStepLIF
from snnpar.nn import Conv2d, Module


class TwoLayerSNN(Module):
    """Real-input encoder conv, then two spike-driven convs."""

    def __init__(self, T=2, cin=2, width=4, seed=0, bias=0.0):
        rng = np.random.default_rng(seed)
        self.time_steps = T
        self.enc = Conv2d(cin, width, 3, padding=1, rng=rng, real_input=True)
        self.lif1 = MultiStepLIF(T)
        self.conv1 = Conv2d(width, width, 3, padding=1, rng=rng)
        self.lif2 = MultiStepLIF(T)
        self.conv2 = Conv2d(width, 3, 3, stride=2, padding=1, rng=rng)
        self.bias = bias
        self.assign_names()

    def forward(self, x):
        T = self.time_steps
        s = self.enc(Tensor(x)) + self.bias
        s = ad.broadcast_to(s.reshape((1,) + s.shape), (T,) + s.shape).reshape((T * s.shape[0],) + s.shape[1:])
        h = self.conv1(self.lif1(s * 3.0))
        return self.conv2(self.lif2(h * 3.0))


def brute_conv_ops(x, weight_shape, stride, padding):
    """Enumerate every (output, input) tap; returns (nonzero taps, in-bounds taps)."""
    O, C, kh, kw = weight_shape
    B, _, H, W = x.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    active = dense_per_sample = 0
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    for c in range(C):
                        for di in range(kh):
                            for dj in range(kw):
                                r, q = i * stride - padding + di, j * stride - padding + dj
                                if 0 <= r < H and 0 <= q < W:
                                    if b == 0:
                                        dense_per_sample += 1
                                    if x[b, c, r, q] != 0:
                                        active += 1
    return active, dense_per_sample


def brute_matmul_ops(left, cols):
    active = 0
    rows = left.reshape(-1, left.shape[-1])
    for row in rows:
        for v in row:
            if v != 0:
                active += cols
    return active, rows.size * cols
