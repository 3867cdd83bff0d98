"""Residual 1-D convolutional ECG encoder with a two-layer projection head.

The layer graph mirrors a Keras functional model: a stem convolution followed
by four residual blocks, global average pooling and a projection head. Layer
and parameter names follow Keras auto-naming (``conv1d_3``,
``batch_normalization_2`` ...) so that ``summary`` can be compared line by line
with a Keras model summary.

Each residual block takes two inputs, the activated main path and the raw
(pre-normalization) skip signal::

    main:  conv(k, stride 1) -> BN -> ReLU -> conv(k, stride d)
    skip:  maxpool(d, d) -> conv(1)
    out:   add -> BN -> ReLU      (the add output is the next block's skip input)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Parameter, Tensor
from .errors import ConfigError, DimensionError

HEAD_PROJECTION = "projection"


@dataclass(frozen=True)
class EncoderConfig:
    input_length: int = 4096
    leads: int = 12
    kernel_size: int = 16
    stem_channels: int = 64
    block_channels: tuple[int, ...] = (128, 196, 256, 320)
    downsample: int = 4
    scale: float = 1.0
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        if isinstance(self.scale, str):
            object.__setattr__(self, "scale", float(Fraction(self.scale)))
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.bn_epsilon <= 0:
            raise ConfigError(f"bn_epsilon must be positive, got {self.bn_epsilon}")
        if not 0 <= self.bn_momentum < 1:
            raise ConfigError(f"bn_momentum must lie in [0, 1), got {self.bn_momentum}")
        for name in ("input_length", "leads", "kernel_size", "stem_channels", "downsample"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.block_channels:
            raise ConfigError("block_channels must not be empty")

    def width(self, channels: int) -> int:
        """Channel count after applying ``scale`` (round half up, at least 1)."""
        return max(1, math.floor(channels * self.scale + 0.5))

    @property
    def embed_dim(self) -> int:
        return self.width(self.block_channels[-1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


PAPER_ENCODER = EncoderConfig()
DESK_ENCODER = EncoderConfig(scale=0.125)


class Layer(NamedTuple):
    name: str
    kind: str  # input | conv | bn | relu | maxpool | add | gap | dense
    inputs: tuple[str, ...]
    attrs: dict


def _keras_name(base: str, counter: dict[str, int]) -> str:
    n = counter.get(base, 0)
    counter[base] = n + 1
    return base if n == 0 else f"{base}_{n}"


def layer_graph(config: EncoderConfig, head: str = HEAD_PROJECTION) -> list[Layer]:
    """Layers in Keras summary order.

    ``head`` is ``"projection"`` (pre-training head), ``"none"`` (encoder only)
    or ``"linear:<n>"`` (a single dense layer with ``n`` outputs).
    """
    counter: dict[str, int] = {}
    layers: list[Layer] = [Layer("ecg", "input", (), {})]
    k, d = config.kernel_size, config.downsample

    def add_layer(base, kind, inputs, **attrs):
        name = _keras_name(base, counter)
        layers.append(Layer(name, kind, tuple(inputs), attrs))
        return name

    # Keras numbers the skip 1x1 conv before the main convs (it is created first
    # in the block), so conv names are reserved in creation order.
    stem = add_layer("conv1d", "conv", ["ecg"], filters=config.width(config.stem_channels), kernel=k, stride=1)
    bn = add_layer("batch_normalization", "bn", [stem])
    act = add_layer("activation", "relu", [bn])
    main_in, skip_in = act, act
    for block_width in config.block_channels:
        width = config.width(block_width)
        skip_conv_name = _keras_name("conv1d", counter)
        conv_a = add_layer("conv1d", "conv", [main_in], filters=width, kernel=k, stride=1)
        bn_a = add_layer("batch_normalization", "bn", [conv_a])
        act_a = add_layer("activation", "relu", [bn_a])
        pool = add_layer("max_pooling1d", "maxpool", [skip_in], pool=d, stride=d)
        conv_b = add_layer("conv1d", "conv", [act_a], filters=width, kernel=k, stride=d)
        layers.append(Layer(skip_conv_name, "conv", (pool,), {"filters": width, "kernel": 1, "stride": 1}))
        summed = add_layer("add", "add", [conv_b, skip_conv_name])
        bn_b = add_layer("batch_normalization", "bn", [summed])
        main_in = add_layer("activation", "relu", [bn_b])
        skip_in = summed
    embed = add_layer("embed", "gap", [main_in])
    if head == HEAD_PROJECTION:
        layers.append(Layer("projection_0", "dense", (embed,), {"units": config.embed_dim, "relu": True}))
        layers.append(Layer("projection", "dense", ("projection_0",), {"units": config.embed_dim, "relu": False}))
    elif head.startswith("linear:"):
        layers.append(Layer("head", "dense", (embed,), {"units": int(head.split(":")[1]), "relu": False}))
    elif head != "none":
        raise ConfigError(f"unknown head {head!r}")
    return layers


class LayerInfo(NamedTuple):
    name: str
    kind: str
    output_shape: tuple[int, ...]
    params: int
    trainable: int
    inputs: tuple[str, ...]


def summary(config: EncoderConfig, head: str = HEAD_PROJECTION) -> list[LayerInfo]:
    """Per-layer output shapes (batch axis omitted) and parameter counts, by shape inference."""
    shapes: dict[str, tuple[int, ...]] = {}
    rows = []
    for layer in layer_graph(config, head):
        a = layer.attrs
        if layer.kind == "input":
            shape, n, nt = (config.input_length, config.leads), 0, 0
        else:
            src = shapes[layer.inputs[0]]
            if layer.kind == "conv":
                shape = (math.ceil(src[0] / a["stride"]), a["filters"])
                n = nt = a["kernel"] * src[1] * a["filters"]
            elif layer.kind == "bn":
                shape, n, nt = src, 4 * src[1], 2 * src[1]
            elif layer.kind == "relu":
                shape, n, nt = src, 0, 0
            elif layer.kind == "maxpool":
                if src[0] < a["pool"]:
                    raise DimensionError(f"{layer.name}: length {src[0]} shorter than pool {a['pool']}")
                shape, n, nt = ((src[0] - a["pool"]) // a["stride"] + 1, src[1]), 0, 0
            elif layer.kind == "add":
                other = shapes[layer.inputs[1]]
                if other != src:
                    raise DimensionError(
                        f"{layer.name}: residual branches do not compose ({layer.inputs[0]} {src} "
                        f"vs {layer.inputs[1]} {other}); input_length must stay divisible by the downsample factor"
                    )
                shape, n, nt = src, 0, 0
            elif layer.kind == "gap":
                shape, n, nt = (src[1],), 0, 0
            elif layer.kind == "dense":
                shape = (a["units"],)
                n = nt = src[0] * a["units"] + a["units"]
            else:  # pragma: no cover
                raise ConfigError(layer.kind)
        shapes[layer.name] = shape
        rows.append(LayerInfo(layer.name, layer.kind, shape, n, nt, layer.inputs))
    return rows


def parameter_shapes(config: EncoderConfig, head: str = HEAD_PROJECTION) -> dict[str, tuple[tuple[int, ...], bool]]:
    """``name -> (shape, trainable)`` for every array of the model, in build order."""
    out: dict[str, tuple[tuple[int, ...], bool]] = {}
    shapes = {r.name: r.output_shape for r in summary(config, head)}
    for layer in layer_graph(config, head):
        if layer.kind == "conv":
            cin = shapes[layer.inputs[0]][1]
            out[f"{layer.name}/kernel"] = ((layer.attrs["kernel"], cin, layer.attrs["filters"]), True)
        elif layer.kind == "bn":
            c = shapes[layer.name][1]
            out[f"{layer.name}/gamma"] = ((c,), True)
            out[f"{layer.name}/beta"] = ((c,), True)
            out[f"{layer.name}/moving_mean"] = ((c,), False)
            out[f"{layer.name}/moving_variance"] = ((c,), False)
        elif layer.kind == "dense":
            cin = shapes[layer.inputs[0]][0]
            out[f"{layer.name}/kernel"] = ((cin, layer.attrs["units"]), True)
            out[f"{layer.name}/bias"] = ((layer.attrs["units"],), True)
    return out


@dataclass
class ModelState:
    config: EncoderConfig
    params: dict[str, Parameter]
    head: str = HEAD_PROJECTION
    epoch: int = 0
    step_count: int = 0
    extra: dict = field(default_factory=dict)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def count(self) -> tuple[int, int, int]:
        """(total, trainable, non-trainable) parameter counts."""
        trainable = sum(p.size for p in self.params.values() if p.trainable)
        frozen = sum(p.size for p in self.params.values() if not p.trainable)
        return trainable + frozen, trainable, frozen

    def astype(self, dtype) -> "ModelState":
        return ModelState(
            self.config,
            {k: p.astype(dtype) for k, p in self.params.items()},
            self.head,
            self.epoch,
            self.step_count,
            dict(self.extra),
        )

    def copy(self) -> "ModelState":
        return self.astype(next(iter(self.params.values())).dtype)


def build_model(config: EncoderConfig, seed: int, head: str = HEAD_PROJECTION, dtype=np.float32) -> ModelState:
    """Initialise a model: He-uniform conv/dense kernels, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    for name, (shape, trainable) in parameter_shapes(config, head).items():
        leaf = name.rsplit("/", 1)[1]
        if leaf == "kernel":
            fan_in = int(np.prod(shape[:-1]))
            limit = math.sqrt(6.0 / fan_in)
            value = rng.uniform(-limit, limit, size=shape)
        elif leaf in ("gamma", "moving_variance"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Parameter(value.astype(dtype), trainable=trainable, name=name)
    return ModelState(config, params, head)


def _check_input(model: ModelState, batch: np.ndarray) -> None:
    cfg = model.config
    if batch.ndim != 3:
        raise DimensionError(f"encoder input must be [B, {cfg.input_length}, {cfg.leads}], got {batch.shape}")
    if batch.shape[1] != cfg.input_length:
        raise DimensionError(f"encoder input axis 1 (length) is {batch.shape[1]}, expected {cfg.input_length}")
    if batch.shape[2] != cfg.leads:
        raise DimensionError(f"encoder input axis 2 (leads) is {batch.shape[2]}, expected {cfg.leads}")


def forward(model: ModelState, batch, training: bool, outputs=("embed",), update_stats: bool = True,
            trace: dict | None = None) -> dict[str, Tensor]:
    """Run the layer graph up to the requested named outputs.

    ``trace``, when given, receives every intermediate activation by layer name.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    _check_input(model, x.data)
    dtype = next(iter(model.params.values())).dtype
    if x.dtype != dtype:
        x = Tensor(x.data.astype(dtype))
    cfg, p = model.config, model.params
    wanted = set(outputs)
    acts: dict[str, Tensor] = {"ecg": x}
    for layer in layer_graph(cfg, model.head)[1:]:
        if wanted.issubset(acts):
            break
        a = layer.attrs
        src = acts[layer.inputs[0]]
        if layer.kind == "conv":
            y = F.conv1d(src, p[f"{layer.name}/kernel"], a["stride"], "same")
        elif layer.kind == "bn":
            y = F.batch_norm(
                src,
                p[f"{layer.name}/gamma"],
                p[f"{layer.name}/beta"],
                p[f"{layer.name}/moving_mean"],
                p[f"{layer.name}/moving_variance"],
                training,
                cfg.bn_momentum,
                cfg.bn_epsilon,
                update_stats,
            )
        elif layer.kind == "relu":
            y = F.relu(src)
        elif layer.kind == "maxpool":
            y = F.max_pool1d(src, a["pool"], a["stride"])
        elif layer.kind == "add":
            y = F.add(src, acts[layer.inputs[1]])
        elif layer.kind == "gap":
            y = F.global_avg_pool(src)
        elif layer.kind == "dense":
            y = F.dense(src, p[f"{layer.name}/kernel"], p[f"{layer.name}/bias"])
            if a["relu"]:
                y = F.relu(y)
        acts[layer.name] = y
    if trace is not None:
        trace.update(acts)
    missing = wanted - set(acts)
    if missing:
        raise ConfigError(f"model has no layer(s) {sorted(missing)}")
    return {name: acts[name] for name in outputs}


def encode(model: ModelState, batch, training: bool = False, update_stats: bool = True) -> Tensor:
    """Encoder output ``h`` (global-average-pooled features), ``[B, embed_dim]``."""
    return forward(model, batch, training, ("embed",), update_stats)["embed"]


def project(model: ModelState, h) -> Tensor:
    """Projection head ``z = g(h)``: dense + ReLU, then dense."""
    p = model.params
    if "projection/kernel" not in p:
        raise ConfigError("model has no projection head")
    z = F.relu(F.dense(h, p["projection_0/kernel"], p["projection_0/bias"]))
    return F.dense(z, p["projection/kernel"], p["projection/bias"])


def embed_numpy(model: ModelState, batch: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Infer-mode embeddings for an array of prepared ECGs, in chunks."""
    out = []
    for start in range(0, len(batch), batch_size):
        out.append(encode(model, batch[start:start + batch_size], training=False).data)
    if not out:
        return np.zeros((0, model.config.embed_dim), dtype=np.float32)
    return np.concatenate(out)
