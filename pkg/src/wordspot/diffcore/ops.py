"""Differentiable layer operations on single images (C x H x W) and vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import InputTooNarrow, InvalidProbability, ShapeMismatch
from .node import Node, make_node

BCE_CLAMP = 1e-7


def _require(cond, message):
    if not cond:
        raise ShapeMismatch(message)


def _scatter(flat_index, weights, size):
    return np.bincount(flat_index.ravel(), weights=weights.ravel(), minlength=size)


# ----------------------------------------------------------------- convolution

def conv_output_extent(extent: int, stride: int) -> int:
    return -(-extent // stride)


def conv2d(x: Node, w: Node, b: Node | None = None, stride: int = 1) -> Node:
    """Cross-correlation with "same" padding ``(k - 1) / 2``."""
    _require(x.value.ndim == 3, f"conv2d expects C x H x W input, got {x.shape}")
    _require(w.value.ndim == 4, f"conv2d expects F x C x kh x kw filters, got {w.shape}")
    c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    _require(c == cw, f"conv2d channel mismatch: input has {c}, filters expect {cw}")
    _require(kh % 2 == 1 and kw % 2 == 1, "conv2d kernels must have odd extents")
    if b is not None:
        _require(b.shape == (f,), f"conv2d bias shape {b.shape} != ({f},)")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = conv_output_extent(h, stride), conv_output_extent(wd, stride)

    if kh == 1 and kw == 1:
        cols = x.value[:, ::stride, ::stride].reshape(c, ho * wo)
    else:
        xp = np.pad(x.value, ((0, 0), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)
    wmat = w.value.reshape(f, -1)
    out = wmat @ cols
    if b is not None:
        out += b.value[:, None]

    def backward(g):
        g = g.reshape(f, ho * wo)
        dx = dw = db = None
        if w.requires_grad:
            dw = (g @ cols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            db = g.sum(axis=1)
        if x.requires_grad:
            dcols = wmat.T @ g
            if kh == 1 and kw == 1:
                dx = np.zeros(x.shape)
                dx[:, ::stride, ::stride] = dcols.reshape(c, ho, wo)
            else:
                dcols = dcols.reshape(c, kh, kw, ho, wo)
                dxp = np.zeros((c, h + 2 * ph, wd + 2 * pw))
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
                dx = dxp[:, ph:ph + h, pw:pw + wd]
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return make_node(out.reshape(f, ho, wo), inputs, "conv2d", backward)


# --------------------------------------------------------------------- pooling

def pool_output_extent(extent: int, window: int, stride: int) -> int:
    return (extent - window) // stride + 1


def _pool_windows(x: Node, window: int, stride: int):
    _require(x.value.ndim == 3, f"pooling expects C x H x W input, got {x.shape}")
    c, h, w = x.shape
    _require(window <= h and window <= w,
             f"pool window {window} exceeds spatial extent {h}x{w}")
    return sliding_window_view(x.value, (window, window), axis=(1, 2))[:, ::stride, ::stride]


def max_pool2d(x: Node, window: int, stride: int | None = None) -> Node:
    stride = stride or window
    win = _pool_windows(x, window, stride)
    c, ho, wo = win.shape[:3]
    flat = win.reshape(c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)  # first maximum in row-major order
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        h, w = x.shape[1:]
        rows = np.arange(ho)[None, :, None] * stride + arg // window
        cols = np.arange(wo)[None, None, :] * stride + arg % window
        index = (np.arange(c)[:, None, None] * h + rows) * w + cols
        return (_scatter(index, g, c * h * w).reshape(x.shape),)

    return make_node(out, (x,), "max_pool2d", backward)


def avg_pool2d(x: Node, window: int, stride: int | None = None) -> Node:
    stride = stride or window
    win = _pool_windows(x, window, stride)
    c, ho, wo = win.shape[:3]
    out = win.mean(axis=(-2, -1))

    def backward(g):
        dx = np.zeros(x.shape)
        share = g / (window * window)
        for i in range(window):
            for j in range(window):
                dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (dx,)

    return make_node(out, (x,), "avg_pool2d", backward)


# ------------------------------------------------------ temporal pyramid pooling

@dataclass(frozen=True)
class TppConfig:
    levels: int = 5
    mode: str = "max"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("TPP needs at least one level")
        if self.mode not in ("max", "avg"):
            raise ValueError(f"unknown TPP bin aggregator {self.mode!r}")

    @property
    def bins(self) -> int:
        return self.levels * (self.levels + 1) // 2


def tpp_bins(width: int, levels: int):
    """Column ranges ``(lo, hi)`` of every bin, level-major."""
    return [(r * width // n, (r + 1) * width // n)
            for n in range(1, levels + 1) for r in range(n)]


def tpp(x: Node, config: TppConfig = TppConfig()) -> Node:
    """Pool each width bin over the full height; output is level, bin, channel."""
    _require(x.value.ndim == 3, f"tpp expects C x H x W input, got {x.shape}")
    c, h, w = x.shape
    if w < config.levels:
        raise InputTooNarrow(f"tpp with {config.levels} levels needs width >= {config.levels}, got {w}")
    bins = tpp_bins(w, config.levels)
    if config.mode == "max":
        col_max = x.value.max(axis=1)
        out = np.concatenate([col_max[:, lo:hi].max(axis=1) for lo, hi in bins])
    else:
        col_sum = x.value.sum(axis=1)
        out = np.concatenate([col_sum[:, lo:hi].sum(axis=1) / (h * (hi - lo)) for lo, hi in bins])

    def backward(g):
        g = g.reshape(len(bins), c)
        if config.mode == "max":
            # argmax only on the backward pass; ties go to the first entry in row-major order
            index = []
            for lo, hi in bins:
                arg = x.value[:, :, lo:hi].reshape(c, -1).argmax(axis=1)
                rows, cols = np.divmod(arg, hi - lo)
                index.append((np.arange(c) * h + rows) * w + lo + cols)
            return (_scatter(np.stack(index), g, c * h * w).reshape(x.shape),)
        dx = np.zeros(x.shape)
        for k, (lo, hi) in enumerate(bins):
            dx[:, :, lo:hi] += (g[k] / (h * (hi - lo)))[:, None, None]
        return (dx,)

    return make_node(out, (x,), "tpp", backward)


# ----------------------------------------------------------- pointwise & dense

def relu(x: Node) -> Node:
    mask = x.value > 0
    return make_node(np.where(mask, x.value, 0.0), (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: Node) -> Node:
    s = expit(x.value)
    return make_node(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """``w @ x + b`` for a flat input vector."""
    _require(x.value.ndim == 1, f"linear expects a flat vector, got {x.shape}")
    _require(w.value.ndim == 2 and w.shape[1] == x.shape[0],
             f"linear weight {w.shape} incompatible with input {x.shape}")
    out = w.value @ x.value
    if b is not None:
        _require(b.shape == (w.shape[0],), f"linear bias {b.shape} != ({w.shape[0]},)")
        out = out + b.value

    def backward(g):
        dx = w.value.T @ g if x.requires_grad else None
        dw = np.outer(g, x.value) if w.requires_grad else None
        return (dx, dw) if b is None else (dx, dw, g)

    inputs = (x, w) if b is None else (x, w, b)
    return make_node(out, inputs, "linear", backward)


def dropout(x: Node, p: float, train: bool, rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_node(x.value * keep, (x,), "dropout", lambda g: (g * keep,))


def add(a: Node, b: Node) -> Node:
    _require(a.shape == b.shape, f"add needs equal shapes, got {a.shape} and {b.shape}")
    return make_node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def concat_channels(*nodes: Node) -> Node:
    _require(len(nodes) >= 1, "concat needs at least one input")
    spatial = {n.shape[1:] for n in nodes}
    _require(len(spatial) == 1, f"concat needs equal spatial extents, got {sorted(spatial)}")
    splits = np.cumsum([n.shape[0] for n in nodes])[:-1]
    out = np.concatenate([n.value for n in nodes], axis=0)
    return make_node(out, nodes, "concat", lambda g: tuple(np.split(g, splits, axis=0)))


def bce_loss(p: Node, target) -> Node:
    """Mean binary cross entropy of sigmoid outputs against binary targets."""
    t = np.asarray(getattr(target, "bits", target), dtype=np.float64)
    _require(p.shape == t.shape, f"bce prediction {p.shape} vs target {t.shape}")
    pc = np.clip(p.value, BCE_CLAMP, 1.0 - BCE_CLAMP)
    d = t.size
    loss = -np.mean(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    inside = (p.value >= BCE_CLAMP) & (p.value <= 1.0 - BCE_CLAMP)

    def backward(g):
        return (g * inside * ((1.0 - t) / (1.0 - pc) - t / pc) / d,)

    return make_node(loss, (p,), "bce", backward)
