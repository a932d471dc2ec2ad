"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes  b"WSPOTCKP"
    version   u32
    arch      32 bytes SHA-256 digest of the layer graph
    iteration u64
    meta      u32 length + UTF-8 JSON (architecture, PHOC and optimizer settings)
    count     u32
    count x { name: u16 length + UTF-8, ndim: u8, dims: ndim x u64,
              data: float64 little-endian, C order }

Arrays are stored sorted by name, so equal states give equal bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import LayerGraph, build
from .diffcore import AdamState
from .errors import ArchMismatch, CheckpointFormatError

MAGIC = b"WSPOTCKP"
VERSION = 1


@dataclass
class Checkpoint:
    graph: LayerGraph
    iteration: int
    params: dict
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def arch_digest(self) -> bytes:
        return self.graph.digest()


def graph_from_meta(meta: dict) -> LayerGraph:
    graph = build(meta["arch"], int(meta["phoc_dim"]), **meta.get("arch_options", {}))
    if meta.get("tpp_mode", "max") != graph.tpp_mode:
        graph = LayerGraph(graph.name, graph.phoc_dim, graph.layers, meta["tpp_mode"], graph.meta)
    return graph


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta)
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    if ckpt.adam is not None:
        a = ckpt.adam
        meta["adam"] = {"learning_rate": a.learning_rate, "beta1": a.beta1, "beta2": a.beta2,
                        "epsilon": a.epsilon, "step_count": a.step_count}
        arrays.update({f"adam.m/{k}": v for k, v in a.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in a.v.items()})
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(ckpt.arch_digest)
    buf.write(struct.pack("<Q", ckpt.iteration))
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        enc = name.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes, expect: LayerGraph | None = None) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a wordspot checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    if expect is not None and expect.digest() != digest:
        raise ArchMismatch(f"checkpoint was written for a different architecture than {expect.name!r}")
    (iteration,) = r.unpack("<Q")
    (n,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable metadata: {exc}") from None
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        arrays[name] = arr
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after last array")

    try:
        graph = graph_from_meta(meta)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"metadata does not describe an architecture: {exc}") from None
    if graph.digest() != digest:
        raise ArchMismatch("stored architecture digest does not match its own description")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    adam = None
    if "adam" in meta:
        a = meta.pop("adam")
        adam = AdamState(learning_rate=a["learning_rate"], beta1=a["beta1"], beta2=a["beta2"],
                         epsilon=a["epsilon"], step_count=a["step_count"])
        adam.m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
        adam.v = {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}
    return Checkpoint(graph, iteration, params, adam, meta)


def load(path, expect: LayerGraph | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expect)
