"""A small dense convolutional classifier that stands in for a large teacher.

Its head is ``logits = F_v @ F_t.T + b``: the penultimate activation ``F_v``
is the visual feature and each row of the head weight ``F_t`` is that
attribute's embedding, which is the layout the feature-level distillation
term expects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import OptimConfig
from .data import Dataset, batch_iter
from .distill import TeacherArtifact, weighted_bce
from .metrics import ConfusionCounts, label_based_mA, threshold
from .nn import Conv2d, Linear, Module


@dataclass
class TeacherConfig:
    widths: tuple[int, ...] = (16, 32, 32)
    feature_dim: int = 32
    epochs: int = 8
    batch_size: int = 32
    lr: float = 3e-3
    seed: int = 0


class MockTeacher(Module):
    def __init__(self, in_ch: int, height: int, width: int, num_attributes: int, cfg: TeacherConfig):
        rng = np.random.default_rng(cfg.seed)
        chans = (in_ch,) + tuple(cfg.widths)
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, padding=1, rng=rng) for i in range(len(cfg.widths))]
        self.biases = [Tensor(np.zeros((1, c, 1, 1), np.float32), requires_grad=True) for c in cfg.widths]
        h, w = height >> len(cfg.widths), width >> len(cfg.widths)
        self.embed = Linear(chans[-1] * h * w, cfg.feature_dim, rng=rng)
        self.head = Linear(cfg.feature_dim, num_attributes, rng=rng)

    def features(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        for conv, b in zip(self.convs, self.biases):
            x = ad.maxpool2d(ad.relu(conv(x) + b), 2, 2)
        return self.embed(x.reshape(x.shape[0], -1))

    def forward(self, images) -> tuple[Tensor, Tensor]:
        f = self.features(images)
        return self.head(f), f

    @property
    def text_features(self) -> np.ndarray:
        return self.head.weight.data


def train_mock_teacher(train_set: Dataset, cfg: TeacherConfig = TeacherConfig(),
                       on_epoch=None) -> MockTeacher:
    """Fit the teacher with plain BCE and Adam."""
    from .train import Adam  # local import: train depends on this module's siblings only

    _, C, H, W = train_set.images.shape
    net = MockTeacher(C, H, W, len(train_set.attributes), cfg)
    opt = Adam(dict(net.named_parameters()), OptimConfig(lr=cfg.lr, weight_decay=0.0))
    for epoch in range(cfg.epochs):
        total = 0.0
        for images, labels in batch_iter(train_set, cfg.batch_size, cfg.seed * 7919 + epoch):
            with Tape() as tape:
                logits, _ = net(images)
                loss = weighted_bce(logits, labels)
                opt.zero_grad()
                tape.backward(loss)
            opt.step(cfg.lr)
            total += loss.item() * len(labels)
        if on_epoch is not None:
            on_epoch(epoch + 1, total / max(len(train_set), 1))
    return net


def teacher_outputs(net: MockTeacher, dataset: Dataset, batch_size: int = 100) -> TeacherArtifact:
    logits, feats = [], []
    for images, _ in batch_iter(dataset, batch_size):
        lg, f = net(images)
        logits.append(lg.data)
        feats.append(f.data)
    m, d = net.text_features.shape
    return TeacherArtifact(dataset.ids,
                           np.concatenate(logits) if logits else np.zeros((0, m)),
                           np.concatenate(feats) if feats else np.zeros((0, d)),
                           net.text_features)


def teacher_mA(art: TeacherArtifact, dataset: Dataset) -> float:
    rows = art.rows_for(dataset.ids)
    scores = 1 / (1 + np.exp(-art.logits[rows].astype(np.float64)))
    counts = ConfusionCounts(len(dataset.attributes)).accumulate(threshold(scores), dataset.labels)
    return label_based_mA(counts)


def merge_artifacts(parts: list[TeacherArtifact]) -> TeacherArtifact:
    return TeacherArtifact(np.concatenate([p.ids for p in parts]),
                           np.concatenate([p.logits for p in parts]),
                           np.concatenate([p.visual for p in parts]), parts[0].text)
