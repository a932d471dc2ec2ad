"""Word image manifests, dataset splits, pixel scaling and augmentation."""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    ConfigError,
    DuplicateId,
    EmptyClass,
    MalformedRow,
    MissingImage,
    WrongPageCount,
)
from .phoc import PhocConfig, normalize_transcription

MANIFEST_COLUMNS = ("sample_id", "image_path", "transcription", "page_id")


@dataclass(eq=False)
class WordSample:
    sample_id: str
    image: np.ndarray  # uint8 gray values, 0 = black ink
    transcription: str
    page_id: str
    image_path: str = ""


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_manifest(path, load_images: bool = True) -> list:
    """Read a tab-separated manifest; image paths are relative to the manifest."""
    path = Path(path)
    base = path.parent
    samples, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            row = line.split("\t")
            if lineno == 1 and tuple(row) == MANIFEST_COLUMNS:
                continue
            if len(row) != 4:
                raise MalformedRow(path, lineno, f"expected 4 tab-separated fields, got {len(row)}")
            sample_id, image_path, transcription, page_id = row
            if not sample_id:
                raise MalformedRow(path, lineno, "empty sample_id")
            if sample_id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate sample_id {sample_id!r}")
            seen.add(sample_id)
            full = (base / image_path) if not Path(image_path).is_absolute() else Path(image_path)
            if not full.is_file():
                raise MissingImage(f"{path}:{lineno}: image not found: {full}")
            image = read_image(full) if load_images else np.zeros((0, 0), np.uint8)
            if load_images and image.size == 0:
                raise MalformedRow(path, lineno, f"empty image {full}")
            samples.append(WordSample(sample_id, image, transcription, page_id, str(full)))
    return samples


def write_manifest(path, rows) -> None:
    """``rows`` are ``(sample_id, image_path, transcription, page_id)`` tuples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for row in rows:
            if any("\t" in str(v) or "\n" in str(v) for v in row):
                raise ValueError(f"manifest fields may not contain tabs or newlines: {row!r}")
            fh.write("\t".join(str(v) for v in row) + "\n")


def load_stop_words(path, config: PhocConfig | None = None) -> set:
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            w = line.strip()
            if w and not w.startswith("#"):
                words.add(normalize_transcription(w, config) if config else w)
    return words


def normalize_pixels(image) -> np.ndarray:
    """Map gray values so black ink is 1.0 and white paper is 0.0."""
    return 1.0 - np.asarray(image, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------- splits

@dataclass
class SplitPlan:
    folds: list  # [(train_ids, test_ids), ...]
    strategy: str

    def fold(self, k: int):
        return self.folds[k]


def _natural_key(text: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", text)]


def make_gw_folds(samples: Sequence[WordSample], num_folds: int = 4,
                  pages_per_batch: int = 5) -> SplitPlan:
    """Cross validation over batches of consecutive pages."""
    pages = sorted({s.page_id for s in samples}, key=_natural_key)
    expected = num_folds * pages_per_batch
    if len(pages) != expected:
        raise WrongPageCount(f"expected {expected} pages, found {len(pages)}")
    batch_of = {p: i // pages_per_batch for i, p in enumerate(pages)}
    folds = []
    for k in range(num_folds):
        test = [s.sample_id for s in samples if batch_of[s.page_id] == k]
        train = [s.sample_id for s in samples if batch_of[s.page_id] != k]
        folds.append((train, test))
    return SplitPlan(folds, f"cross_validation({num_folds},{pages_per_batch})")


def official_split(train: Sequence[WordSample], test: Sequence[WordSample]) -> SplitPlan:
    train_ids = [s.sample_id for s in train]
    test_ids = [s.sample_id for s in test]
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DuplicateId(f"{len(overlap)} sample ids appear in both train and test")
    return SplitPlan([(train_ids, test_ids)], "official")


# ---------------------------------------------------------------- augmentation

@dataclass
class AugmentationPlan:
    target_total: int = 10_000
    rotation: float = 5.0  # degrees, +-
    shear: float = 5.0  # degrees, +-
    scale: tuple = (0.9, 1.1)
    translation: float = 0.05  # fraction of width/height, +-
    seed: int = 0

    def __post_init__(self):
        self.scale = tuple(float(s) for s in self.scale)
        if self.target_total < 0:
            raise ConfigError("target_total must be non-negative")
        if len(self.scale) != 2 or not 0 < self.scale[0] <= self.scale[1]:
            raise ConfigError("scale must be a (low, high) pair of positive numbers")
        if min(self.rotation, self.shear, self.translation) < 0:
            raise ConfigError("rotation, shear and translation ranges must be non-negative")

    def per_class_counts(self, num_classes: int) -> list:
        base, extra = divmod(self.target_total, num_classes)
        return [base + (1 if i < extra else 0) for i in range(num_classes)]

    def to_dict(self):
        d = asdict(self)
        d["scale"] = list(self.scale)
        return d


def affine_matrix(shape, rotation, shear, sx, sy, tx, ty) -> tuple:
    """Output->input mapping (matrix, offset) in (row, col) coordinates about the centre."""
    h, w = shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    a, s = np.deg2rad(rotation), np.deg2rad(shear)
    # forward transform in (x, y) = (col, row)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    sh = np.array([[1.0, np.tan(s)], [0.0, 1.0]])
    fwd_xy = rot @ sh @ np.diag([sx, sy])
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    fwd = swap @ fwd_xy @ swap
    inv = np.linalg.inv(fwd)
    shift = np.array([ty * h, tx * w])
    offset = center - inv @ (center + shift)
    return inv, offset


def random_affine(image: np.ndarray, plan: AugmentationPlan, rng: np.random.Generator) -> np.ndarray:
    """Apply one random affine distortion to a normalized (ink = 1) image."""
    rotation = rng.uniform(-plan.rotation, plan.rotation)
    shear = rng.uniform(-plan.shear, plan.shear)
    sx = rng.uniform(*plan.scale)
    sy = rng.uniform(*plan.scale)
    tx = rng.uniform(-plan.translation, plan.translation)
    ty = rng.uniform(-plan.translation, plan.translation)
    matrix, offset = affine_matrix(image.shape, rotation, shear, sx, sy, tx, ty)
    return ndimage.affine_transform(image, matrix, offset=offset, order=1,
                                    mode="constant", cval=0.0)


def group_by_class(samples, config: PhocConfig | None = None) -> "OrderedDict[str, list]":
    """Samples keyed by normalized transcription, classes sorted; empty words dropped."""
    config = config or PhocConfig()
    groups = {}
    for s in samples:
        key = normalize_transcription(s.transcription, config)
        if key:
            groups.setdefault(key, []).append(s)
    return OrderedDict(sorted(groups.items()))


class AugmentedPool:
    """Class-balanced pool of ``plan.target_total`` distorted images.

    Items are generated on demand: item ``j`` of class ``c`` always comes
    from ``default_rng([seed, c, j])``, so any subset can be produced in any
    order (or in parallel) with identical results.
    """

    def __init__(self, samples, plan: AugmentationPlan, config: PhocConfig | None = None):
        self.plan = plan
        self.groups = group_by_class(samples, config)
        if not self.groups:
            raise EmptyClass("no trainable samples (all transcriptions empty?)")
        self.classes = list(self.groups)
        self._sources = [[normalize_pixels(s.image) for s in self.groups[k]] for k in self.classes]
        self._labels = [[s.transcription for s in self.groups[k]] for k in self.classes]
        self.counts = plan.per_class_counts(len(self.classes))
        self._starts = np.concatenate([[0], np.cumsum(self.counts)])

    def __len__(self):
        return int(self._starts[-1])

    def locate(self, index: int) -> tuple:
        if not 0 <= index < len(self):
            raise IndexError(index)
        c = int(np.searchsorted(self._starts, index, side="right") - 1)
        return c, index - int(self._starts[c])

    def item(self, class_index: int, j: int) -> tuple:
        rng = np.random.default_rng([self.plan.seed, class_index, j])
        sources = self._sources[class_index]
        k = int(rng.integers(len(sources)))
        image = random_affine(sources[k], self.plan, rng)
        return image, self._labels[class_index][k]

    def __getitem__(self, index: int) -> tuple:
        return self.item(*self.locate(index))

    def __iter__(self) -> Iterator[tuple]:
        for c, n in enumerate(self.counts):
            for j in range(n):
                yield self.item(c, j)

    def class_of(self, index: int) -> str:
        return self.classes[self.locate(index)[0]]


def augment(samples, plan: AugmentationPlan, config: PhocConfig | None = None) -> Iterator[tuple]:
    """Stream of ``(image, transcription)`` pairs, class by class."""
    return iter(AugmentedPool(samples, plan, config))
