"""Segmentation-based QbE / QbS retrieval and interpolated mAP."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyQuerySet, MalformedRow, NoRelevantItems, ShapeMismatch, ZeroVector
from .phoc import PhocConfig, encode

MODES = ("qbe", "qbs")


@dataclass
class DescriptorSet:
    ids: list
    descriptors: np.ndarray
    transcriptions: list
    phoc: dict | None = None

    def __post_init__(self):
        arr = np.asarray(self.descriptors, dtype=np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(len(self.ids), -1) if arr.size else np.zeros((0, 0))
        self.descriptors = arr
        if not (len(self.ids) == len(self.transcriptions) == self.descriptors.shape[0]):
            raise ShapeMismatch("ids, transcriptions and descriptors must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")

    def __len__(self):
        return len(self.ids)


@dataclass
class RankedList:
    query: str
    ids: list
    scores: np.ndarray
    relevance: np.ndarray
    num_relevant: int
    average_precision: float


@dataclass
class EvalResult:
    mode: str
    lists: list = field(default_factory=list)

    @property
    def mean_average_precision(self) -> float:
        return float(np.mean([r.average_precision for r in self.lists]))


# -------------------------------------------------------------------- scoring

def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine similarity of shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise ZeroVector(f"descriptor {bad} is a zero vector")
    return x / norms[:, None]


def average_precision(relevance: Sequence, num_relevant: int) -> float:
    """Interpolated AP: precision at each hit lifted to the best precision further down."""
    if num_relevant < 1:
        raise NoRelevantItems("average precision needs at least one relevant item")
    rel = np.asarray(relevance, dtype=bool)
    if not rel.any():
        return 0.0
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interpolated[rel].sum() / num_relevant)


def rank(scores: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    """Indices by descending score, ties by ascending sample id."""
    id_order = np.empty(len(ids), dtype=np.int64)
    id_order[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    return np.lexsort((id_order, -np.asarray(scores)))


# ------------------------------------------------------------------- queries

def select_qbe_queries(test: DescriptorSet, stop_words: Iterable[str] = ()) -> list:
    """Indices of test items whose transcription occurs at least twice."""
    stop = set(stop_words)
    counts = Counter(test.transcriptions)
    return [i for i, t in enumerate(test.transcriptions)
            if t and counts[t] >= 2 and t not in stop]


def select_qbs_queries(test: DescriptorSet, stop_words: Iterable[str] = ()) -> list:
    """Distinct test transcriptions in order of first appearance, minus stop words."""
    stop = set(stop_words)
    seen = []
    for t in dict.fromkeys(test.transcriptions):
        if t and t not in stop:
            seen.append(t)
    return seen


def evaluate(test: DescriptorSet, mode: str, stop_words: Iterable[str] = (),
             phoc_config: PhocConfig | None = None) -> EvalResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    stop = set(stop_words)
    result = EvalResult(mode)
    if len(test) == 0:
        raise EmptyQuerySet("empty test set")
    unit = _unit_rows(test.descriptors)
    trans = np.asarray(test.transcriptions, dtype=object)
    ids = list(test.ids)

    if mode == "qbe":
        for qi in select_qbe_queries(test, stop):
            scores = _scores(unit, unit[qi])
            keep = np.ones(len(test), dtype=bool)
            keep[qi] = False
            pool = np.flatnonzero(keep)
            result.lists.append(_ranked(ids[qi], pool, scores, trans == trans[qi], ids))
    else:
        config = phoc_config or PhocConfig()
        for q in select_qbs_queries(test, stop):
            qvec = encode(q, config).bits.astype(np.float64)
            if qvec.shape[0] != unit.shape[1]:
                raise ShapeMismatch(f"PHOC dimension {qvec.shape[0]} does not match "
                                    f"descriptor dimension {unit.shape[1]}")
            scores = _scores(unit, qvec / np.linalg.norm(qvec))
            pool = np.arange(len(test))
            result.lists.append(_ranked(q, pool, scores, trans == q, ids))
    if not result.lists:
        raise EmptyQuerySet(f"no {mode} queries after selection")
    return result


def _scores(unit: np.ndarray, q: np.ndarray) -> np.ndarray:
    # row-wise reduction rather than BLAS gemv: identical rows must give
    # bit-identical scores or the id tie-break is never reached
    return (unit * q).sum(axis=1)


def _ranked(query, pool, scores, relevant, ids) -> RankedList:
    pool_ids = [ids[i] for i in pool]
    order = pool[rank(scores[pool], pool_ids)]
    rel = relevant[order]
    r = int(relevant[pool].sum())
    return RankedList(query, [ids[i] for i in order], scores[order], rel, r,
                      average_precision(rel, r))


# --------------------------------------------------------------------- files

def write_descriptors(path, dset: DescriptorSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if dset.phoc is not None:
            fh.write("# phoc " + json.dumps(dset.phoc, sort_keys=True) + "\n")
        for sid, t, vec in zip(dset.ids, dset.transcriptions, dset.descriptors):
            fh.write("\t".join([sid, t] + [repr(float(v)) for v in vec]) + "\n")


def read_descriptors(path) -> DescriptorSet:
    ids, trans, rows, phoc = [], [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("# phoc "):
                phoc = json.loads(line[len("# phoc "):])
                continue
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise MalformedRow(path, lineno, "expected sample_id, transcription and values")
            try:
                rows.append([float(v) for v in fields[2:]])
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise MalformedRow(path, lineno, "descriptor length differs from first record")
            ids.append(fields[0])
            trans.append(fields[1])
    return DescriptorSet(ids, np.asarray(rows, dtype=np.float64), trans, phoc)


def write_report(path, result: EvalResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "query", "R", "AP"])
        for r in result.lists:
            w.writerow([result.mode, r.query, r.num_relevant, repr(r.average_precision)])
        w.writerow([result.mode, "mAP", "", repr(result.mean_average_precision)])


def read_report_map(path) -> tuple:
    """``(mode, mAP)`` from the summary row of an evaluation report."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for row in reversed(rows):
        if len(row) == 4 and row[1] == "mAP":
            return row[0], float(row[3])
    raise MalformedRow(path, len(rows), "no mAP summary row")
