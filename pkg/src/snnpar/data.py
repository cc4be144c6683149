"""Attribute datasets on disk and a synthetic pedestrian-like generator.

A dataset directory holds one manifest per split (``manifest_<split>.txt``)
and one tensor file per image. Manifest layout::

    name_1,name_2,...,name_M
    #select,0110...            (optional: attribute selection mask)
    <id>,<relative path>,<bitstring of length M>

Synthetic images are drawn on a 64x32 canvas (integer upscaling gives larger
sizes) so that every attribute is readable from pixels by
:func:`oracle_labels`.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .tensorio import read_tensor, write_tensor

BASE_H, BASE_W = 64, 32

ATTRIBUTES = ("upper_red", "lower_yellow", "hat", "bag", "wide_body", "long_lower",
              "striped_upper", "dark_hair")
DEFAULT_RATIOS = (0.5, 0.4, 0.3, 0.25, 0.45, 0.6, 0.35, 0.3)

RED = (0.85, 0.1, 0.1)
BLUE = (0.1, 0.2, 0.85)
YELLOW = (0.9, 0.8, 0.1)
GREEN = (0.1, 0.55, 0.15)
SKIN = (0.9, 0.7, 0.55)
WHITE = (0.95, 0.95, 0.95)
HAIR = (0.05, 0.05, 0.05)
MAGENTA = (0.8, 0.1, 0.8)
STRIPE_GAIN = 0.45


class ManifestError(ValueError):
    """Malformed manifest line."""


class IntegrityError(OSError):
    """Manifest refers to a missing or unreadable tensor file."""


@dataclass
class Record:
    id: int
    path: str
    labels: np.ndarray  # uint8, one entry per vocabulary attribute


@dataclass
class Manifest:
    attributes: list[str]
    records: list[Record] = field(default_factory=list)
    split: str = "train"
    selected: np.ndarray | None = None
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def selected_attributes(self) -> list[str]:
        if self.selected is None:
            return list(self.attributes)
        return [a for a, keep in zip(self.attributes, self.selected) if keep]

    def labels(self) -> np.ndarray:
        """Label matrix [N, M] restricted to the selected attributes."""
        full = np.array([r.labels for r in self.records], dtype=np.uint8).reshape(-1, len(self.attributes))
        return full if self.selected is None else full[:, self.selected]

    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records], dtype=np.int64)


def manifest_path(root: str | os.PathLike, split: str) -> Path:
    return Path(root) / f"manifest_{split}.txt"


def write_manifest(path: str | os.PathLike, manifest: Manifest) -> None:
    lines = [",".join(manifest.attributes)]
    if manifest.selected is not None:
        lines.append("#select," + "".join("1" if s else "0" for s in manifest.selected))
    for r in manifest.records:
        lines.append(f"{r.id},{r.path}," + "".join(str(int(b)) for b in r.labels))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _bits(text: str, m: int, lineno: int, what: str) -> np.ndarray:
    if len(text) != m or set(text) - {"0", "1"}:
        raise ManifestError(f"line {lineno}: {what} must be {m} characters of 0/1, got {text!r}")
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def load_manifest(path: str | os.PathLike, split: str | None = None, check_files: bool = True) -> Manifest:
    path = Path(path)
    if split is None:
        stem = path.stem
        split = stem[len("manifest_"):] if stem.startswith("manifest_") else "train"
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip():
        raise ManifestError("line 1: missing attribute vocabulary")
    attributes = [a.strip() for a in lines[0].split(",")]
    if any(not a for a in attributes) or len(set(attributes)) != len(attributes):
        raise ManifestError("line 1: attribute names must be non-empty and unique")
    m = len(attributes)
    manifest = Manifest(attributes, [], split, None, path.parent)
    seen: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#select,"):
            mask = _bits(line[len("#select,"):], m, lineno, "selection mask")
            manifest.selected = mask.astype(bool)
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ManifestError(f"line {lineno}: expected 'id,path,bits', got {line!r}")
        try:
            rid = int(parts[0])
        except ValueError:
            raise ManifestError(f"line {lineno}: id {parts[0]!r} is not an integer") from None
        if rid in seen:
            raise ManifestError(f"line {lineno}: duplicate id {rid}")
        seen.add(rid)
        labels = _bits(parts[2], m, lineno, "label bitstring")
        if check_files and not (path.parent / parts[1]).is_file():
            raise IntegrityError(f"line {lineno}: tensor file {parts[1]!r} not found under {path.parent}")
        manifest.records.append(Record(rid, parts[1], labels))
    return manifest


class Dataset:
    """Images and labels of one split, loaded into memory."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self.attributes = manifest.selected_attributes
        self.labels = manifest.labels().astype(np.float32)
        self.ids = manifest.ids()
        imgs = []
        for r in manifest.records:
            try:
                imgs.append(read_tensor(manifest.root / r.path))
            except (OSError, ValueError) as exc:
                raise IntegrityError(f"sample {r.id}: cannot read {r.path}: {exc}") from exc
        self.images = np.clip(np.stack(imgs), 0.0, 1.0) if imgs else np.zeros((0, 3, BASE_H, BASE_W), np.float32)

    @classmethod
    def load(cls, root: str | os.PathLike, split: str) -> "Dataset":
        return cls(load_manifest(manifest_path(root, split), split))

    def __len__(self) -> int:
        return len(self.ids)

    def positive_ratios(self) -> np.ndarray:
        if not len(self):
            return np.zeros(len(self.attributes))
        return self.labels.sum(axis=0, dtype=np.float64) / len(self)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        sub = object.__new__(Dataset)
        idx = np.asarray(idx, dtype=np.int64)
        sub.manifest = self.manifest
        sub.attributes = self.attributes
        sub.labels, sub.ids, sub.images = self.labels[idx], self.ids[idx], self.images[idx]
        return sub


def batch_iter(dataset: Dataset, batch_size: int, shuffle_seed: int | None = None,
               with_index: bool = False) -> Iterator[tuple]:
    """Yield (images, labels) batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.arange(len(dataset))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = (dataset.images[idx], dataset.labels[idx])
        yield batch + (idx,) if with_index else batch


# -- synthetic generation ----------------------------------------------------

@dataclass
class SyntheticSpec:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 500
    n_val: int = 0
    image_height: int = BASE_H
    image_width: int = BASE_W
    positive_ratios: tuple[float, ...] = DEFAULT_RATIOS
    noise: float = 0.05
    max_shift: int = 2

    def __post_init__(self):
        self.positive_ratios = tuple(float(r) for r in self.positive_ratios)
        if len(self.positive_ratios) != len(ATTRIBUTES):
            raise ValueError(f"need {len(ATTRIBUTES)} positive ratios, got {len(self.positive_ratios)}")
        if not all(0 < r < 1 for r in self.positive_ratios):
            raise ValueError("positive ratios must lie strictly between 0 and 1")
        k = self.image_height // BASE_H
        if k < 1 or self.image_height != k * BASE_H or self.image_width != k * BASE_W:
            raise ValueError(f"image size must be an integer multiple of {BASE_H}x{BASE_W}")
        if not 0 <= self.max_shift <= 2:
            raise ValueError("max_shift must be in [0, 2] to keep the bag inside the frame")

    @property
    def scale(self) -> int:
        return self.image_height // BASE_H


def _stratified_labels(rng: np.random.Generator, n: int, ratios) -> np.ndarray:
    labels = np.zeros((n, len(ratios)), dtype=np.uint8)
    for j, r in enumerate(ratios):
        labels[rng.permutation(n)[:int(round(r * n))], j] = 1
    return labels


def render(labels: np.ndarray, shift: int, background: np.ndarray) -> np.ndarray:
    """Clean 64x32 RGB image [3, H, W] for one label vector."""
    (upper_red, lower_yellow, hat, bag, wide, long_lower, striped, dark_hair) = (bool(b) for b in labels)
    img = np.empty((BASE_H, BASE_W, 3), dtype=np.float32)
    img[:] = background
    cx = BASE_W // 2 + shift

    def fill(r0, r1, c0, c1, color):
        img[r0:r1 + 1, c0:c1 + 1] = color

    if hat:
        fill(1, 4, cx - 5, cx + 5, WHITE)
    fill(5, 13, cx - 4, cx + 4, SKIN)
    if dark_hair:
        fill(5, 8, cx - 4, cx + 4, HAIR)
    half = 8 if wide else 5
    fill(14, 34, cx - half, cx + half, RED if upper_red else BLUE)
    if striped:
        for r in range(14, 35):
            if (r - 14) // 2 % 2 == 1:
                img[r, cx - half:cx + half + 1] *= STRIPE_GAIN
    if bag:
        fill(20, 28, cx + 9, cx + 13, MAGENTA)
    leg = YELLOW if lower_yellow else GREEN
    end = 62 if long_lower else 47
    for c0 in (cx - 5, cx + 1):
        fill(35, end, c0, c0 + 4, leg)
        if not long_lower:
            fill(48, 62, c0, c0 + 4, SKIN)
    return img.transpose(2, 0, 1)


def synthesize(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    labels = _stratified_labels(rng, n, spec.positive_ratios)
    k = spec.scale
    images = np.empty((n, 3, spec.image_height, spec.image_width), dtype=np.float32)
    for i in range(n):
        shift = int(rng.integers(-spec.max_shift, spec.max_shift + 1))
        background = rng.uniform(0.3, 0.6) + rng.uniform(-0.07, 0.07, size=3)
        img = render(labels[i], shift, background)
        if k > 1:
            img = img.repeat(k, axis=1).repeat(k, axis=2)
        img = img + rng.uniform(-spec.noise, spec.noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels


def generate_synthetic(spec: SyntheticSpec, out_dir: str | os.PathLike) -> dict[str, Manifest]:
    """Write images and one manifest per non-empty split; deterministic in ``spec.seed``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    manifests = {}
    next_id = 0
    for split, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        if n <= 0:
            continue
        images, labels = synthesize(spec, n, rng)
        (out / "images" / split).mkdir(parents=True, exist_ok=True)
        records = []
        for i in range(n):
            rel = f"images/{split}/{next_id:06d}.sntf"
            write_tensor(out / rel, images[i])
            records.append(Record(next_id, rel, labels[i]))
            next_id += 1
        man = Manifest(list(ATTRIBUTES), records, split, None, out)
        write_manifest(manifest_path(out, split), man)
        manifests[split] = man
    return manifests


# -- rule-based pixel oracle -------------------------------------------------

def _is_red(p):
    return (p[..., 0] > 0.6) & (p[..., 1] < 0.3) & (p[..., 2] < 0.3)


def _is_blue(p):
    return (p[..., 2] > 0.6) & (p[..., 0] < 0.3) & (p[..., 1] < 0.4)


def _is_magenta(p):
    return (p[..., 0] > 0.6) & (p[..., 2] > 0.6) & (p[..., 1] < 0.3)


def _is_yellow(p):
    return (p[..., 0] > 0.6) & (p[..., 1] > 0.55) & (p[..., 2] < 0.3)


def _is_green(p):
    return (p[..., 1] > 0.4) & (p[..., 0] < 0.3) & (p[..., 2] < 0.35)


def oracle_labels(image: np.ndarray) -> np.ndarray:
    """Recover the attribute vector of a synthetic image from its pixels alone."""
    C, H, W = image.shape
    k = H // BASE_H
    img = image.reshape(C, BASE_H, k, BASE_W, k).mean(axis=(2, 4)).transpose(1, 2, 0)
    # rows 14, 15, 18, 19, ... are never darkened by stripes
    plain_rows = img[[14, 15, 18, 19, 22, 23]]
    torso = _is_red(plain_rows) | _is_blue(plain_rows)
    cols = np.nonzero(torso.any(axis=0))[0]
    if cols.size == 0:
        raise ValueError("no torso found; not a synthetic attribute image")
    c0, c1 = int(cols.min()), int(cols.max())
    cx = (c0 + c1) // 2
    upper_red = _is_red(plain_rows).sum() > _is_blue(plain_rows).sum()
    wide = (c1 - c0 + 1) > 14
    hat = img[2:4, cx].mean() > 0.85
    dark_hair = img[6:8, cx].max() < 0.2
    bag = bool(_is_magenta(img[22:27, cx + 10:cx + 13]).mean() > 0.5)
    lower_yellow = _is_yellow(img[38:42, cx - 3]).sum() > _is_green(img[38:42, cx - 3]).sum()
    leg_low = img[54:58, cx - 3]
    long_lower = (_is_yellow(leg_low) | _is_green(leg_low)).mean() > 0.5
    bright = img.mean(axis=2)
    striped = bright[[16, 17, 20, 21], cx].mean() < 0.7 * bright[[14, 15, 18, 19], cx].mean()
    return np.array([upper_red, lower_yellow, hat, bag, wide, long_lower, striped, dark_hair],
                    dtype=np.uint8)
