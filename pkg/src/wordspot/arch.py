"""The four PHOC-predicting CNNs as inspectable layer graphs.

A :class:`LayerGraph` is a blueprint: an ordered list of typed layers whose
``inputs`` refer to earlier layers by name.  It knows nothing about
weights; :class:`Network` instantiates one with He-initialized parameters
and evaluates it on single images through :mod:`wordspot.diffcore`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore.ops import conv_output_extent, pool_output_extent
from .errors import ShapeInferenceFailure

ARCHITECTURES = ("lenet", "tppnet", "resnet", "densenet")

RESNET_ORDINALS = (256,) * 3 + (512,) * 4 + (1024,) * 6 + (2048,) * 3


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str
    inputs: tuple = ()
    channels: int = 0
    kernel: int = 0
    stride: int = 1
    p: float = 0.0
    levels: int = 0
    role: str = ""


@dataclass(frozen=True)
class LayerGraph:
    name: str
    phoc_dim: int
    layers: tuple
    tpp_mode: str = "max"
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __iter__(self):
        return iter(self.layers)

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    @property
    def output(self) -> str:
        return self.layers[-1].name

    def of_kind(self, kind, role=None):
        return [l for l in self.layers if l.kind == kind and (role is None or l.role == role)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "phoc_dim": self.phoc_dim,
            "tpp_mode": self.tpp_mode,
            "meta": self.meta,
            "layers": [asdict(l) for l in self.layers],
        }

    def digest(self) -> bytes:
        """SHA-256 over the canonical JSON form; identifies the architecture."""
        d = self.to_dict()
        d["layers"] = [dict(l, inputs=list(l["inputs"])) for l in d["layers"]]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).digest()


class _Builder:
    def __init__(self, divisor=1):
        self.layers = []
        self.divisor = divisor
        self.last = "input"
        self.layers.append(Layer("input", "input", channels=1))

    def ch(self, n):
        return max(1, n // self.divisor)

    def add(self, name, kind, inputs=None, **kw):
        inputs = (self.last,) if inputs is None else tuple(inputs)
        self.layers.append(Layer(name, kind, inputs, **kw))
        self.last = name
        return name

    def conv(self, name, channels, kernel, stride=1, relu=True, inputs=None, role="main"):
        self.add(name, "conv", inputs, channels=channels, kernel=kernel, stride=stride, role=role)
        if relu:
            self.add(name + ".relu", "relu")
        return self.last

    def mlp_head(self, phoc_dim, hidden, p_drop):
        self.add("tpp", "tpp", levels=5)
        for i, units in enumerate(hidden, 1):
            self.add(f"fc{i}", "linear", channels=units)
            self.add(f"fc{i}.relu", "relu")
            if p_drop:
                self.add(f"fc{i}.dropout", "dropout", p=p_drop)
        self.add(f"fc{len(hidden) + 1}", "linear", channels=phoc_dim)
        self.add("sigmoid", "sigmoid")


def _check_dim(phoc_dim):
    if phoc_dim <= 0:
        raise ValueError("phoc_dim must be positive")


def build_phoclenet(phoc_dim: int, width_divisor: int = 1) -> LayerGraph:
    _check_dim(phoc_dim)
    b = _Builder(width_divisor)
    b.conv("conv1", b.ch(20), 5)
    b.add("pool1", "maxpool", kernel=2, stride=2)
    b.conv("conv2", b.ch(50), 5)
    b.mlp_head(phoc_dim, (b.ch(500), b.ch(500)), 0.0)
    return LayerGraph("lenet", phoc_dim, tuple(b.layers), meta={"width_divisor": width_divisor})


def build_tpp_phocnet(phoc_dim: int, width_divisor: int = 1) -> LayerGraph:
    _check_dim(phoc_dim)
    b = _Builder(width_divisor)
    stages = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
    k = 0
    for s, (reps, channels) in enumerate(stages, 1):
        for _ in range(reps):
            k += 1
            b.conv(f"conv{k}", b.ch(channels), 3)
        if s <= 2:
            b.add(f"pool{s}", "maxpool", kernel=2, stride=2)
    b.mlp_head(phoc_dim, (b.ch(4096), b.ch(4096)), 0.5)
    return LayerGraph("tppnet", phoc_dim, tuple(b.layers), meta={"width_divisor": width_divisor})


def _bottleneck(b: _Builder, name, in_channels, ordinal, stride):
    if ordinal % 4:
        raise ValueError(f"bottleneck ordinal {ordinal} is not divisible by 4")
    entry = b.last
    inner = ordinal // 4
    b.conv(f"{name}.conv1", inner, 1, stride=stride, inputs=(entry,))
    b.conv(f"{name}.conv2", inner, 3)
    main = b.conv(f"{name}.conv3", ordinal, 1, relu=False)
    shortcut = entry
    if in_channels != ordinal or stride != 1:
        shortcut = b.conv(f"{name}.proj", ordinal, 1, stride=stride, relu=False,
                          inputs=(entry,), role="shortcut")
    b.add(f"{name}.add", "add", inputs=(main, shortcut))
    b.add(f"{name}.relu", "relu")


def build_phocresnet(phoc_dim: int, width_divisor: int = 1, stem_stride: int = 1) -> LayerGraph:
    _check_dim(phoc_dim)
    b = _Builder(width_divisor)
    b.conv("stem", b.ch(64), 7, stride=stem_stride)
    b.add("pool1", "maxpool", kernel=3, stride=2)
    channels = b.ch(64)
    for i, ordinal in enumerate(RESNET_ORDINALS):
        n = max(4, ordinal // width_divisor)
        _bottleneck(b, f"block{i + 1}", channels, n, stride=2 if i == 3 else 1)
        channels = n
    b.mlp_head(phoc_dim, (b.ch(4096), b.ch(4096)), 0.5)
    meta = {"width_divisor": width_divisor, "stem_stride": stem_stride}
    return LayerGraph("resnet", phoc_dim, tuple(b.layers), meta=meta)


def _dense_block(b: _Builder, name, num_layers, growth):
    state = b.last
    for j in range(1, num_layers + 1):
        new = b.conv(f"{name}.l{j}", growth, 3, inputs=(state,), role="dense")
        state = b.add(f"{name}.l{j}.cat", "concat", inputs=(state, new))
    return state


def build_phocdensenet(phoc_dim: int, width_divisor: int = 1, growth_rate: int = 12,
                       block_layers=(30, 60), compression: float = 0.5) -> LayerGraph:
    _check_dim(phoc_dim)
    b = _Builder(width_divisor)
    k = max(1, growth_rate // width_divisor)
    channels = b.ch(32)
    b.conv("conv0", channels, 3)
    b.add("pool0", "avgpool", kernel=2, stride=2)
    for i, num in enumerate(block_layers, 1):
        if i > 1:
            channels = int(np.floor(channels * compression))
            b.conv(f"trans{i - 1}", channels, 1)
            b.add(f"trans{i - 1}.pool", "avgpool", kernel=2, stride=2)
        _dense_block(b, f"dense{i}", num, k)
        channels += num * k
    b.mlp_head(phoc_dim, (b.ch(4096), b.ch(4096)), 0.5)
    meta = {"width_divisor": width_divisor, "growth_rate": k,
            "block_layers": list(block_layers), "compression": compression}
    return LayerGraph("densenet", phoc_dim, tuple(b.layers), meta=meta)


BUILDERS = {
    "lenet": build_phoclenet,
    "tppnet": build_tpp_phocnet,
    "resnet": build_phocresnet,
    "densenet": build_phocdensenet,
}


def build(name: str, phoc_dim: int, **kwargs) -> LayerGraph:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    return builder(phoc_dim, **kwargs)


# ------------------------------------------------------------ shape inference

@dataclass
class ShapeRow:
    name: str
    kind: str
    shape: tuple
    params: int


def _param_shapes(layer: Layer, in_shape: tuple) -> dict:
    if layer.kind == "conv":
        c_in = in_shape[0]
        return {"weight": (layer.channels, c_in, layer.kernel, layer.kernel),
                "bias": (layer.channels,)}
    if layer.kind == "linear":
        return {"weight": (layer.channels, in_shape[0]), "bias": (layer.channels,)}
    return {}


def _out_shape(layer: Layer, shapes: list, tpp_bins: int) -> tuple:
    kind = layer.kind
    s = shapes[0] if shapes else None
    if kind in ("relu", "sigmoid", "dropout"):
        return s
    if kind == "conv":
        if len(s) != 3:
            raise ValueError(f"conv needs a C x H x W input, got {s}")
        return (layer.channels, conv_output_extent(s[1], layer.stride),
                conv_output_extent(s[2], layer.stride))
    if kind in ("maxpool", "avgpool"):
        if len(s) != 3:
            raise ValueError(f"pooling needs a C x H x W input, got {s}")
        if s[1] < layer.kernel or s[2] < layer.kernel:
            raise ValueError(f"pool window {layer.kernel} exceeds spatial extent {s[1]}x{s[2]}")
        return (s[0], pool_output_extent(s[1], layer.kernel, layer.stride),
                pool_output_extent(s[2], layer.kernel, layer.stride))
    if kind == "tpp":
        if s[2] < layer.levels:
            raise ValueError(f"width {s[2]} is narrower than {layer.levels} TPP levels")
        return (s[0] * tpp_bins,)
    if kind == "linear":
        if len(s) != 1:
            raise ValueError(f"linear needs a flat input, got {s}")
        return (layer.channels,)
    if kind == "add":
        if shapes[0] != shapes[1]:
            raise ValueError(f"add operands differ: {shapes[0]} vs {shapes[1]}")
        return s
    if kind == "concat":
        if len({t[1:] for t in shapes}) != 1:
            raise ValueError(f"concat operands differ spatially: {shapes}")
        return (sum(t[0] for t in shapes),) + s[1:]
    raise ValueError(f"unknown layer kind {kind!r}")


def infer_shapes(graph: LayerGraph, height: int, width: int) -> list:
    """Shape trace for a ``1 x height x width`` input."""
    shapes = {}
    rows = []
    for layer in graph:
        try:
            if layer.kind == "input":
                if height < 1 or width < 1:
                    raise ValueError(f"input extent {height}x{width} must be positive")
                out = (1, height, width)
            else:
                ins = [shapes[n] for n in layer.inputs]
                levels = layer.levels
                out = _out_shape(layer, ins, levels * (levels + 1) // 2)
                n_params = sum(int(np.prod(p)) for p in _param_shapes(layer, ins[0]).values())
        except (ValueError, KeyError) as exc:
            raise ShapeInferenceFailure(layer.name, str(exc)) from None
        shapes[layer.name] = out
        rows.append(ShapeRow(layer.name, layer.kind, out,
                             0 if layer.kind == "input" else n_params))
    return rows


def parameter_shapes(graph: LayerGraph) -> dict:
    """``{"<layer>.weight": shape, ...}``; independent of the input extent."""
    # channels do not depend on spatial size, so trace at a comfortable extent
    h, w = minimum_input(graph)
    shapes = {r.name: r.shape for r in infer_shapes(graph, h, w)}
    out = {}
    for layer in graph:
        if layer.kind in ("conv", "linear"):
            for key, shape in _param_shapes(layer, shapes[layer.inputs[0]]).items():
                out[f"{layer.name}.{key}"] = shape
    return out


def count_params(graph: LayerGraph) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(graph).values())


def minimum_input(graph: LayerGraph, limit: int = 256) -> tuple:
    """Smallest square-ish ``(H, W)`` accepted by the graph."""
    for n in range(1, limit + 1):
        try:
            infer_shapes(graph, n, n)
            return n, n
        except ShapeInferenceFailure:
            continue
    raise ShapeInferenceFailure(graph.name, f"no input up to {limit}x{limit} is accepted")


def conv_layer_count(graph: LayerGraph, include_shortcuts: bool = False) -> int:
    return sum(1 for l in graph.of_kind("conv") if include_shortcuts or l.role != "shortcut")


def final_feature_maps(graph: LayerGraph) -> int:
    """Channel count entering the TPP layer."""
    h, w = minimum_input(graph)
    shapes = {r.name: r.shape for r in infer_shapes(graph, h, w)}
    return shapes[graph.layer("tpp").inputs[0]][0]


# --------------------------------------------------------------- instantiation

def fan_in(shape: tuple) -> int:
    return int(np.prod(shape[1:]))


class Network:
    """Parameters for a :class:`LayerGraph` plus a forward interpreter."""

    def __init__(self, graph: LayerGraph, seed: int = 0, params: dict | None = None):
        self.graph = graph
        shapes = parameter_shapes(graph)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name, shape in shapes.items():
                if name.endswith(".weight"):
                    params[name] = dc.he_init(shape, fan_in(shape), rng)
                else:
                    params[name] = np.zeros(shape)
        self.params = {name: dc.parameter(np.ascontiguousarray(params[name], dtype=np.float64),
                                          name=name) for name in shapes}

    def arrays(self) -> dict:
        return {name: p.value for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def forward(self, image, train: bool = False, rng: np.random.Generator | None = None,
                taps: bool = False):
        """Evaluate on one ``H x W`` (or ``1 x H x W``) image; returns the sigmoid node."""
        x = image if isinstance(image, dc.Node) else dc.constant(image)
        if x.value.ndim == 2:
            x = dc.constant(x.value[None]) if not x.requires_grad else x
        values = {}
        tpp_cfg = None
        for layer in self.graph:
            k = layer.kind
            if k == "input":
                out = x
            else:
                ins = [values[n] for n in layer.inputs]
                if k == "conv":
                    out = dc.conv2d(ins[0], self.params[layer.name + ".weight"],
                                    self.params[layer.name + ".bias"], stride=layer.stride)
                elif k == "linear":
                    out = dc.linear(ins[0], self.params[layer.name + ".weight"],
                                    self.params[layer.name + ".bias"])
                elif k == "relu":
                    out = dc.relu(ins[0])
                elif k == "sigmoid":
                    out = dc.sigmoid(ins[0])
                elif k == "maxpool":
                    out = dc.max_pool2d(ins[0], layer.kernel, layer.stride)
                elif k == "avgpool":
                    out = dc.avg_pool2d(ins[0], layer.kernel, layer.stride)
                elif k == "tpp":
                    tpp_cfg = tpp_cfg or dc.TppConfig(layer.levels, self.graph.tpp_mode)
                    out = dc.tpp(ins[0], tpp_cfg)
                elif k == "dropout":
                    out = dc.dropout(ins[0], layer.p, train, rng)
                elif k == "add":
                    out = dc.add(ins[0], ins[1])
                elif k == "concat":
                    out = dc.concat_channels(*ins)
                else:
                    raise ValueError(f"unknown layer kind {k!r}")
            values[layer.name] = out
        return (values[self.graph.output], values) if taps else values[self.graph.output]

    def predict(self, image) -> np.ndarray:
        return self.forward(image, train=False).value
