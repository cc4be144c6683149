"""Training objectives and teacher artifacts.

``total = ce + alpha * resp_kd + beta * feat_kd`` where

* ``ce`` is a class-balanced binary cross-entropy over attributes,
* ``resp_kd`` is KL(teacher || student) between per-attribute Bernoulli
  distributions softened by a temperature,
* ``feat_kd`` is KL(p || q) between softmaxes over attributes of cosine
  similarities of attribute embeddings with the teacher's visual feature (p)
  and with the projected student feature (q).
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, Module
from .tensorio import FormatError, _read_exact, read_u64, write_u64

PROB_FLOOR = 1e-7
TEACHER_MAGIC = b"SNTA1\0"


class ValidationError(ValueError):
    pass


@dataclass
class DistillConfig:
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 2.0
    feat_temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0 or not self.feat_temperature > 0:
            raise ValidationError("distillation temperatures must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be non-negative")


@dataclass
class AttrWeights:
    """Per-attribute loss weights derived from training-set positive ratios."""

    ratios: np.ndarray
    omega_pos: np.ndarray
    omega_neg: np.ndarray

    @classmethod
    def from_ratios(cls, ratios) -> "AttrWeights":
        r = np.asarray(ratios, dtype=np.float64)
        if np.any((r <= 0) | (r >= 1)):
            raise ValidationError(f"positive ratios must lie in (0, 1), got {r}")
        return cls(r, np.exp(1 - r), np.exp(r))

    @classmethod
    def uniform(cls, m: int) -> "AttrWeights":
        return cls(np.full(m, 0.5), np.ones(m), np.ones(m))

    def matrix(self, labels: np.ndarray) -> np.ndarray:
        return np.where(labels > 0.5, self.omega_pos, self.omega_neg)


def _binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    return labels


def weighted_bce(logits: Tensor, labels: np.ndarray, weights: AttrWeights | None = None) -> Tensor:
    """Batch mean of the weighted per-attribute BCE summed over attributes."""
    y = _binary(labels).astype(logits.dtype)
    if logits.shape != y.shape:
        raise ValidationError(f"logits {logits.shape} and labels {y.shape} differ in shape")
    w = np.ones_like(y) if weights is None else weights.matrix(y).astype(logits.dtype)
    # y log s(z) + (1 - y) log s(-z)
    ll = ad.log_sigmoid(logits) * (w * y) + ad.log_sigmoid(-logits) * (w * (1 - y))
    return -ll.sum() * (1.0 / y.shape[0])


def _bernoulli_logs(z: Tensor):
    p = ad.clamp(ad.sigmoid(z), PROB_FLOOR, 1 - PROB_FLOOR)
    return p, ad.log(p), ad.log(1 - p)


def resp_kd(student_logits: Tensor, teacher_logits, temperature: float = 2.0) -> Tensor:
    """Mean over samples and attributes of KL(teacher || student) times temperature^2."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    t = ad.as_tensor(teacher_logits, like=student_logits)
    if t.shape != student_logits.shape:
        raise ValidationError(f"teacher logits {t.shape} and student logits {student_logits.shape} differ")
    pt, log_pt, log_qt = _bernoulli_logs(t.detach() * (1.0 / temperature))
    _, log_ps, log_qs = _bernoulli_logs(student_logits * (1.0 / temperature))
    kl = pt * (log_pt - log_ps) + (1 - pt) * (log_qt - log_qs)
    return kl.mean() * (temperature ** 2)


def _unit_rows(x: Tensor, what: str) -> Tensor:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(norms == 0):
        raise ValidationError(f"{what} has a zero-norm row; cosine similarity undefined")
    return x / ad.sqrt(ad.square(x).sum(axis=-1, keepdims=True))


def cosine_sims(text_feat: Tensor, visual: Tensor) -> Tensor:
    """[B, M] cosine similarities between each visual row and each attribute embedding."""
    t = _unit_rows(text_feat, "text features")
    v = _unit_rows(visual, "visual features")
    return ad.linear(v, t)


def feat_kd(student_feat: Tensor, teacher_feat, text_feat, projection: Module | None = None,
            temperature: float = 1.0) -> Tensor:
    """Mean KL(p || q) over samples, p from the teacher, q from the projected student."""
    proj = projection(student_feat) if projection is not None else student_feat
    tf = ad.as_tensor(teacher_feat, like=proj).detach()
    txt = ad.as_tensor(text_feat, like=proj).detach()
    if proj.shape != tf.shape:
        raise ValidationError(f"projected student features {proj.shape} vs teacher {tf.shape}")
    log_p = ad.log_softmax(cosine_sims(txt, tf) * (1.0 / temperature), axis=-1)
    log_q = ad.log_softmax(cosine_sims(txt, proj) * (1.0 / temperature), axis=-1)
    p = np.exp(log_p.data)
    return ((log_p - log_q) * p).sum() * (1.0 / proj.shape[0])


def total_loss(ce, respkd, featkd, cfg: DistillConfig):
    return ce + respkd * cfg.alpha + featkd * cfg.beta


class Projection(Linear):
    """Learnable map from student feature width to teacher feature width."""

    def __init__(self, d_student: int, d_teacher: int, seed: int = 0):
        super().__init__(d_student, d_teacher, bias=False, rng=np.random.default_rng(seed + 7919))


# -- teacher artifact file ---------------------------------------------------

@dataclass
class TeacherArtifact:
    ids: np.ndarray           # [N] int64
    logits: np.ndarray        # [N, M]
    visual: np.ndarray        # [N, D_t]
    text: np.ndarray          # [M, D_t]

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.logits = np.asarray(self.logits, dtype=np.float32)
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.text = np.asarray(self.text, dtype=np.float32)
        n, m, d = len(self.ids), self.text.shape[0], self.text.shape[1]
        if self.logits.shape != (n, m) or self.visual.shape != (n, d):
            raise ValidationError(f"inconsistent artifact shapes: logits {self.logits.shape}, "
                                  f"visual {self.visual.shape}, text {self.text.shape}, {n} ids")
        if len(set(self.ids.tolist())) != n:
            raise ValidationError("duplicate sample ids in teacher artifact")

    def __len__(self) -> int:
        return len(self.ids)

    def validate_norms(self) -> None:
        if np.any(np.linalg.norm(self.text, axis=1) == 0) or np.any(np.linalg.norm(self.visual, axis=1) == 0):
            raise ValidationError("teacher artifact contains zero-norm features")

    def rows_for(self, ids) -> np.ndarray:
        """Artifact row index for each requested sample id."""
        index = {int(i): k for k, i in enumerate(self.ids)}
        missing = [int(i) for i in ids if int(i) not in index]
        if missing:
            shown = ", ".join(map(str, missing[:20]))
            raise ValidationError(f"teacher artifact lacks {len(missing)} sample ids: {shown}"
                                  + (" ..." if len(missing) > 20 else ""))
        return np.array([index[int(i)] for i in ids], dtype=np.int64)


def write_teacher(path: str | os.PathLike, art: TeacherArtifact) -> None:
    n, (m, d) = len(art), art.text.shape
    with open(path, "wb") as f:
        f.write(TEACHER_MAGIC)
        for v in (n, m, d):
            write_u64(f, v)
        f.write(np.ascontiguousarray(art.text, dtype="<f4").tobytes())
        for k in range(n):
            f.write(struct.pack("<q", int(art.ids[k])))
            f.write(np.ascontiguousarray(art.logits[k], dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(art.visual[k], dtype="<f4").tobytes())


def read_teacher(path: str | os.PathLike) -> TeacherArtifact:
    with open(path, "rb") as f:
        magic = f.read(len(TEACHER_MAGIC))
        if magic != TEACHER_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        n, m, d = read_u64(f), read_u64(f), read_u64(f)
        text = np.frombuffer(_read_exact(f, 4 * m * d), dtype="<f4").reshape(m, d)
        rec = np.dtype([("id", "<i8"), ("logits", "<f4", (m,)), ("visual", "<f4", (d,))])
        body = np.frombuffer(_read_exact(f, rec.itemsize * n), dtype=rec)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {n} records")
    return TeacherArtifact(body["id"].copy(), body["logits"].reshape(n, m).copy(),
                           body["visual"].reshape(n, d).copy(), text.copy())
