"""Optimizer, learning-rate schedule, checkpoints and the student training loop."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import distill as kd
from .autodiff import Tape, Tensor
from .config import OptimConfig, RunConfig, ScheduleConfig, dump_config, model_config_from_text
from .data import Dataset, batch_iter
from .metrics import ConfusionCounts, MetricsReport, report, threshold
from .model import ModelConfig, Spikingformer
from .nn import Module
from .tensorio import FormatError, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, Tensor], cfg: OptimConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1 ** self.t
        bc2 = 1 - c.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad + c.weight_decay * p.data if c.weight_decay else p.grad
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + c.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.float32)
        return out

    def load(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k][...] = state[f"adam.m.{k}"]
            self.v[k][...] = state[f"adam.v.{k}"]
        self.t = int(state["adam.t"][0])


def learning_rate(base_lr: float, sched: ScheduleConfig, epoch: int, step: int = 0,
                  steps_per_epoch: int = 1) -> float:
    """Linear warm-up from 0 to ``base_lr``, then step decay at the configured epochs."""
    if epoch < sched.warmup_epochs:
        done = epoch * steps_per_epoch + step + 1
        return base_lr * done / (sched.warmup_epochs * steps_per_epoch)
    n_decays = sum(1 for e in sched.decay_epochs if epoch >= e)
    return base_lr * sched.decay_factor ** n_decays


# -- checkpoints -------------------------------------------------------------

def text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def array_to_text(arr: np.ndarray) -> str:
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")


@dataclass
class Checkpoint:
    model_state: dict[str, np.ndarray]
    extra_state: dict[str, np.ndarray]   # projection, optimizer
    epoch: int
    config_text: str
    attributes: list[str]
    history: list[dict]

    def to_tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> f32 array map in the order it is written to disk."""
        blob = {f"model.{k}": v for k, v in self.model_state.items()}
        blob.update(self.extra_state)
        blob["meta.epoch"] = np.array([self.epoch], dtype=np.float32)
        blob["meta.config"] = text_to_array(self.config_text)
        blob["meta.attributes"] = text_to_array(",".join(self.attributes))
        blob["meta.history"] = text_to_array(json.dumps(self.history))
        return blob

    def save(self, path) -> None:
        save_checkpoint(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        blob = load_checkpoint(path)
        try:
            model_state = {k[len("model."):]: v for k, v in blob.items() if k.startswith("model.")}
            extra = {k: v for k, v in blob.items() if not k.startswith(("model.", "meta."))}
            return cls(model_state, extra, int(blob["meta.epoch"][0]), array_to_text(blob["meta.config"]),
                       array_to_text(blob["meta.attributes"]).split(","),
                       json.loads(array_to_text(blob["meta.history"])))
        except KeyError as exc:
            raise FormatError(f"{path}: checkpoint lacks entry {exc}") from None

    def model_config(self) -> ModelConfig:
        return model_config_from_text(self.config_text)

    def build_model(self) -> Spikingformer:
        model = Spikingformer(self.model_config())
        model.load_state_dict(self.model_state)
        return model


# -- evaluation ----------------------------------------------------------------

def predict_scores(model: Spikingformer, dataset: Dataset, batch_size: int = 50) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    try:
        for images, _ in batch_iter(dataset, batch_size):
            logits, _ = model(images)
            out.append(1 / (1 + np.exp(-logits.data.astype(np.float64))))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, len(dataset.attributes)))


def evaluate(model: Spikingformer, dataset: Dataset, cutoff: float = 0.5, mode: str = "instance",
             batch_size: int = 50) -> MetricsReport:
    scores = predict_scores(model, dataset, batch_size)
    counts = ConfusionCounts(len(dataset.attributes)).accumulate(threshold(scores, cutoff), dataset.labels)
    return report(counts, mode, attributes=list(dataset.attributes))


# -- training ------------------------------------------------------------------

@dataclass
class TeacherView:
    """Teacher artifact rows aligned with a dataset's sample order."""

    logits: np.ndarray
    visual: np.ndarray
    text: np.ndarray

    @classmethod
    def align(cls, art: kd.TeacherArtifact, dataset: Dataset) -> "TeacherView":
        if art.text.shape[0] != len(dataset.attributes):
            raise kd.ValidationError(f"teacher has {art.text.shape[0]} attributes, "
                                     f"dataset has {len(dataset.attributes)}")
        art.validate_norms()
        rows = art.rows_for(dataset.ids)
        return cls(art.logits[rows], art.visual[rows], art.text)


class Trainer:
    def __init__(self, cfg: RunConfig, train_set: Dataset, eval_set: Dataset | None = None,
                 teacher: kd.TeacherArtifact | None = None, out_dir: str | Path | None = None):
        self.cfg = cfg.validate()
        self.train_set = train_set
        self.eval_set = eval_set
        self.out_dir = Path(out_dir) if out_dir is not None else None
        mcfg = cfg.model
        if mcfg.num_attributes != len(train_set.attributes):
            raise kd.ValidationError(f"model.num_attributes={mcfg.num_attributes} but the dataset "
                                     f"has {len(train_set.attributes)} attributes")
        self.model = Spikingformer(mcfg)
        d = cfg.distill
        self.dcfg = kd.DistillConfig(d.alpha, d.beta, d.temperature, d.feat_temperature)
        ratios = train_set.positive_ratios()
        self.weights = (kd.AttrWeights.uniform(mcfg.num_attributes) if d.uniform_weights
                        else kd.AttrWeights.from_ratios(np.clip(ratios, 1e-3, 1 - 1e-3)))
        self.teacher = TeacherView.align(teacher, train_set) if teacher is not None else None
        self.projection = None
        params = {f"model.{k}": p for k, p in self.model.named_parameters()}
        if self.teacher is not None:
            self.projection = kd.Projection(mcfg.embed_dim, self.teacher.visual.shape[1], mcfg.seed)
            params.update({f"projection.{k}": p for k, p in self.projection.named_parameters()})
        self.optimizer = Adam(params, cfg.optim)
        self.epoch = 0
        self.history: list[dict] = []

    # one optimization step; returns the loss components
    def step(self, images, labels, idx, lr: float) -> dict[str, float]:
        with Tape() as tape:
            logits, feats = self.model(images)
            ce = kd.weighted_bce(logits, labels, self.weights)
            parts = {"ce": ce}
            if self.teacher is not None:
                parts["resp_kd"] = kd.resp_kd(logits, self.teacher.logits[idx], self.dcfg.temperature)
                parts["feat_kd"] = kd.feat_kd(feats, self.teacher.visual[idx], self.teacher.text,
                                              self.projection, self.dcfg.feat_temperature)
                loss = kd.total_loss(ce, parts["resp_kd"], parts["feat_kd"], self.dcfg)
            else:
                loss = ce
            self.optimizer.zero_grad()
            tape.backward(loss)
        self.optimizer.step(lr)
        out = {k: float(v.item()) for k, v in parts.items()}
        out["loss"] = float(loss.item())
        return out

    def run_epoch(self) -> dict:
        cfg = self.cfg
        self.model.train()
        steps = -(-len(self.train_set) // cfg.train.batch_size)
        sums: dict[str, float] = {}
        seen = 0
        t0 = time.perf_counter()
        # the shuffle depends only on (seed, epoch) so resumed runs replay the same order
        order_seed = cfg.train.seed * 100003 + self.epoch
        for s, (images, labels, idx) in enumerate(batch_iter(self.train_set, cfg.train.batch_size,
                                                              order_seed, with_index=True)):
            lr = learning_rate(cfg.optim.lr, cfg.schedule, self.epoch, s, steps)
            comps = self.step(images, labels, idx, lr)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            seen += len(idx)
        entry = {"epoch": self.epoch + 1, "lr": lr}
        entry.update({k: v / max(seen, 1) for k, v in sums.items()})
        entry["seconds"] = time.perf_counter() - t0
        if self.eval_set is not None and len(self.eval_set):
            entry["eval"] = evaluate(self.model, self.eval_set).as_dict()
        self.epoch += 1
        self.history.append(entry)
        return entry

    def fit(self, epochs: int | None = None, on_epoch=None) -> list[dict]:
        target = self.cfg.train.epochs if epochs is None else epochs
        while self.epoch < target:
            entry = self.run_epoch()
            log.info("epoch %d %s", entry["epoch"], {k: v for k, v in entry.items() if k != "epoch"})
            if self.out_dir is not None:
                with open(self.out_dir / "metrics.ndjson", "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry) + "\n")
                if self.epoch % self.cfg.train.checkpoint_every == 0 or self.epoch == target:
                    self.checkpoint().save(self.out_dir / "checkpoint.snpk")
            if on_epoch is not None:
                on_epoch(entry)
        return self.history

    def checkpoint(self) -> Checkpoint:
        extra = self.optimizer.state()
        if self.projection is not None:
            extra.update({f"projection.{k}": p.data for k, p in self.projection.named_parameters()})
        return Checkpoint(self.model.state_dict(), extra, self.epoch, dump_config(self.cfg),
                          list(self.train_set.attributes), self.history)

    def restore(self, ck: Checkpoint) -> None:
        if ck.attributes != list(self.train_set.attributes):
            raise kd.ValidationError("checkpoint attribute vocabulary differs from the dataset")
        self.model.load_state_dict(ck.model_state)
        if self.projection is not None:
            proj = {k[len("projection."):]: v for k, v in ck.extra_state.items() if k.startswith("projection.")}
            self.projection.load_state_dict(proj)
        self.optimizer.load(ck.extra_state)
        self.epoch = ck.epoch
        self.history = list(ck.history)


def prepare_run_dir(out_dir: str | Path, cfg: RunConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    return out


def count_parameters(module: Module) -> int:
    return sum(p.size for p in module.parameters())
