"""Training loop, descriptor extraction and result tables."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .arch import LayerGraph, Network, build
from .config import TrainConfig, dump_config
from .data import AugmentedPool, load_manifest, make_gw_folds, normalize_pixels
from .diffcore import AdamState, adam_step, bce_loss
from .errors import ArchMismatch, DataUnavailable, DivergedLoss, WordSpotError
from .phoc import PhocConfig, encode, normalize_transcription
from .retrieval import DescriptorSet

log = logging.getLogger(__name__)


def graph_for(config: TrainConfig) -> LayerGraph:
    graph = build(config.arch, config.phoc.dimension, **config.arch_options)
    if config.tpp_mode != graph.tpp_mode:
        graph = LayerGraph(graph.name, graph.phoc_dim, graph.layers, config.tpp_mode, graph.meta)
    return graph


def checkpoint_meta(config: TrainConfig) -> dict:
    return {
        "arch": config.arch,
        "phoc_dim": config.phoc.dimension,
        "arch_options": dict(config.arch_options),
        "tpp_mode": config.tpp_mode,
        "phoc": config.phoc.to_dict(),
        "seed": config.seed,
    }


def load_split(config: TrainConfig):
    """``(train_samples, test_samples)`` according to ``config.data``."""
    d = config.data
    try:
        if d.split == "official":
            if not d.train_manifest:
                raise DataUnavailable("data.train_manifest is not set")
            train = load_manifest(config.resolve(d.train_manifest))
            test = load_manifest(config.resolve(d.test_manifest)) if d.test_manifest else []
            return train, test
        samples = load_manifest(config.resolve(d.manifest))
    except FileNotFoundError as exc:
        raise DataUnavailable(str(exc)) from None
    train_ids, test_ids = make_gw_folds(samples).fold(d.fold - 1)
    by_id = {s.sample_id: s for s in samples}
    return [by_id[i] for i in train_ids], [by_id[i] for i in test_ids]


class EpochSampler:
    """Draws pool indices without replacement, reshuffling at each epoch."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def draw(self, n: int) -> list:
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(self.size)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


class RawPool:
    """Un-augmented training images, used when ``target_total`` is 0."""

    def __init__(self, samples, config: PhocConfig):
        self.items = [(normalize_pixels(s.image), s.transcription) for s in samples
                      if normalize_transcription(s.transcription, config)]
        if not self.items:
            raise DataUnavailable("no trainable samples")

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


def accumulate_gradients(net: Network, batch: Sequence, targets: Sequence,
                         rng: np.random.Generator | None, train: bool = True) -> float:
    """Backprop each sample on its own graph and average into ``param.grad``.

    Returns the mean loss.  Reduction runs in sample order, so the result does
    not depend on how the per-sample passes are scheduled.
    """
    net.zero_grad()
    total = 0.0
    for image, target in zip(batch, targets):
        loss = bce_loss(net.forward(image, train=train, rng=rng), target)
        loss.backward()
        total += float(loss.value)
    b = len(batch)
    for p in net.params.values():
        if p.grad is not None:
            p.grad /= b
    return total / b


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    loss_log: list = field(default_factory=list)
    out_dir: Path | None = None


def write_loss_log(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "learning_rate", "loss"])
        for it, lr, loss in rows:
            w.writerow([it, repr(lr), repr(loss)])


def train(config: TrainConfig, train_samples=None, out_dir=None,
          progress: Callable[[int, float, float], None] | None = None) -> TrainResult:
    if train_samples is None:
        train_samples, _ = load_split(config)
    if not train_samples:
        raise DataUnavailable("training set is empty")
    out = Path(out_dir) if out_dir is not None else config.resolve(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")

    graph = graph_for(config)
    net = Network(graph, seed=config.seed)
    if config.augmentation.target_total > 0:
        pool = AugmentedPool(train_samples, config.augmentation, config.phoc)
    else:
        pool = RawPool(train_samples, config.phoc)
    sampler = EpochSampler(len(pool), np.random.default_rng([config.seed, 1]))
    dropout_rng = np.random.default_rng([config.seed, 2])
    targets = {}
    state = AdamState(learning_rate=config.learning_rate)
    arrays = net.arrays()
    meta = checkpoint_meta(config)
    rows = []
    started = time.perf_counter()
    log.info("training %s (%d parameters) on %d pool images", graph.name,
             sum(a.size for a in arrays.values()), len(pool))

    for it in range(config.total_iterations):
        lr = config.learning_rate_at(it)
        state.learning_rate = lr
        batch, labels = [], []
        for idx in sampler.draw(config.batch_size):
            image, label = pool[idx]
            word = normalize_transcription(label, config.phoc)
            if word not in targets:
                targets[word] = encode(word, config.phoc).bits.astype(np.float64)
            batch.append(image)
            labels.append(targets[word])
        loss = accumulate_gradients(net, batch, labels, dropout_rng, train=True)
        if not math.isfinite(loss):
            raise DivergedLoss(it, loss)
        grads = {name: p.grad for name, p in net.params.items() if p.grad is not None}
        adam_step(arrays, grads, state)
        rows.append((it, lr, loss))
        if progress is not None:
            progress(it, lr, loss)
        if config.log_period and (it + 1) % config.log_period == 0:
            recent = np.mean([r[2] for r in rows[-config.log_period:]])
            log.info("iter %d lr %.1e loss %.5f (%.1fs)", it + 1, lr, recent,
                     time.perf_counter() - started)
        if config.checkpoint_period and (it + 1) % config.checkpoint_period == 0:
            ckpt_io.save(ckpt_io.Checkpoint(graph, it + 1, arrays, state, meta),
                         out / f"checkpoint_{it + 1:08d}.bin")

    net.zero_grad()
    final = ckpt_io.Checkpoint(graph, config.total_iterations, arrays, state, meta)
    ckpt_io.save(final, out / "checkpoint.bin")
    write_loss_log(out / "loss.csv", rows)
    return TrainResult(final, rows, out)


def network_from_checkpoint(ckpt: ckpt_io.Checkpoint) -> Network:
    return Network(ckpt.graph, params=ckpt.params)


def extract(ckpt: ckpt_io.Checkpoint, samples, expect: LayerGraph | None = None) -> DescriptorSet:
    """Eval-mode sigmoid outputs for every sample."""
    if expect is not None and expect.digest() != ckpt.arch_digest:
        raise ArchMismatch(f"checkpoint does not match architecture {expect.name!r}")
    phoc = PhocConfig.from_dict(ckpt.meta.get("phoc", {}))
    net = network_from_checkpoint(ckpt)
    ids, trans, rows = [], [], []
    for s in samples:
        ids.append(s.sample_id)
        trans.append(normalize_transcription(s.transcription, phoc))
        rows.append(net.predict(normalize_pixels(s.image)))
    dim = ckpt.graph.phoc_dim
    return DescriptorSet(ids, np.asarray(rows).reshape(len(rows), dim), trans, phoc.to_dict())


# ------------------------------------------------------------------ reporting

DATASETS = (("gw", "George Washington"), ("iam", "IAM"), ("botany", "Botany Train III"))
ARCH_LABELS = {"lenet": "LeNet", "tppnet": "TPP-PHOCNet", "resnet": "PHOCResNet",
               "densenet": "PHOCDenseNet"}


def results_header() -> list:
    header = ["Architecture/Method"]
    for _, label in DATASETS:
        header += [f"{label} QbE", f"{label} QbS"]
    return header


def format_percent(value: float) -> str:
    return f"{100.0 * value:.2f}"


def results_table(results: dict) -> list:
    """``results[(arch, dataset, mode)] = mAP`` -> rows mirroring the comparison table."""
    for arch, dataset, mode in results:
        if dataset not in dict(DATASETS):
            raise WordSpotError(f"unknown dataset {dataset!r}")
        if mode not in ("qbe", "qbs"):
            raise WordSpotError(f"unknown mode {mode!r}")
    rows = [results_header()]
    archs = list(dict.fromkeys(a for a, _, _ in results))
    ordered = [a for a in ARCH_LABELS if a in archs] + [a for a in archs if a not in ARCH_LABELS]
    for arch in ordered:
        row = [ARCH_LABELS.get(arch, arch)]
        for key, _ in DATASETS:
            for mode in ("qbe", "qbs"):
                v = results.get((arch, key, mode))
                row.append("-" if v is None else format_percent(v))
        rows.append(row)
    return rows


def write_results_table(path, results: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(results_table(results))
