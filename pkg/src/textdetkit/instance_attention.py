"""Instance-token self-attention over RoI features with pooled global context.

Per-instance RoI maps are reduced to compact tokens (1 x 1 conv to fewer
channels, adaptive max pooling, row-major flatten), mixed across instances by
a stack of post-norm transformer encoder layers, recovered back to RoI-sized
maps (reshape, bilinear upsampling, 1 x 1 conv), and fused with the original
features plus a global context vector via element-wise summation. The global
context is the sum over pyramid levels of a per-level 1 x 1 conv followed by
global average pooling.

Tokens carry no positional encoding: instances form a set, so the whole
pipeline is permutation equivariant, a contract the tests pin down. Dropout
is omitted; outputs are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyProposalSet, ShapeError
from .ndtensor import (
    Conv2dKernel,
    Tensor,
    adaptive_max_pool,
    as_tensor,
    bilinear_upsample,
    conv2d,
    layer_norm,
    linear,
    relu,
    softmax,
)


@dataclass
class EncoderLayer:
    """Weights of one post-norm encoder layer (attention + FFN)."""

    w_query: Tensor
    b_query: Tensor
    w_key: Tensor
    b_key: Tensor
    w_value: Tensor
    b_value: Tensor
    w_out: Tensor
    b_out: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm1_gamma: Tensor
    norm1_beta: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor

    def validate(self, d_model: int, ffn_hidden: int) -> None:
        expect = {
            "w_query": (d_model, d_model), "b_query": (d_model,),
            "w_key": (d_model, d_model), "b_key": (d_model,),
            "w_value": (d_model, d_model), "b_value": (d_model,),
            "w_out": (d_model, d_model), "b_out": (d_model,),
            "ffn_w1": (d_model, ffn_hidden), "ffn_b1": (ffn_hidden,),
            "ffn_w2": (ffn_hidden, d_model), "ffn_b2": (d_model,),
            "norm1_gamma": (d_model,), "norm1_beta": (d_model,),
            "norm2_gamma": (d_model,), "norm2_beta": (d_model,),
        }
        for name, shape in expect.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ConfigError(
                    f"encoder layer tensor {name} must have shape {shape}, got {arr.shape}"
                )

    @classmethod
    def zeros(cls, d_model: int, ffn_hidden: int) -> "EncoderLayer":
        z = np.zeros
        return cls(
            w_query=z((d_model, d_model)), b_query=z(d_model),
            w_key=z((d_model, d_model)), b_key=z(d_model),
            w_value=z((d_model, d_model)), b_value=z(d_model),
            w_out=z((d_model, d_model)), b_out=z(d_model),
            ffn_w1=z((d_model, ffn_hidden)), ffn_b1=z(ffn_hidden),
            ffn_w2=z((ffn_hidden, d_model)), ffn_b2=z(d_model),
            norm1_gamma=np.ones(d_model), norm1_beta=z(d_model),
            norm2_gamma=np.ones(d_model), norm2_beta=z(d_model),
        )

    @classmethod
    def random(cls, d_model: int, ffn_hidden: int, rng: np.random.Generator,
               scale: float = 0.05) -> "EncoderLayer":
        def w(*shape):
            return rng.normal(0.0, scale, size=shape)

        return cls(
            w_query=w(d_model, d_model), b_query=w(d_model),
            w_key=w(d_model, d_model), b_key=w(d_model),
            w_value=w(d_model, d_model), b_value=w(d_model),
            w_out=w(d_model, d_model), b_out=w(d_model),
            ffn_w1=w(d_model, ffn_hidden), ffn_b1=w(ffn_hidden),
            ffn_w2=w(ffn_hidden, d_model), ffn_b2=w(d_model),
            norm1_gamma=1.0 + w(d_model) * 0.1, norm1_beta=w(d_model),
            norm2_gamma=1.0 + w(d_model) * 0.1, norm2_beta=w(d_model),
        )


@dataclass
class AttentionConfig:
    """Dimensions and weights of the whole instance-attention module.

    Defaults follow the deployed setting: 256 RoI channels reduced to 32,
    14 x 14 RoIs pooled to 3 x 3 (token width 288), three encoder layers with
    four heads, FFN hidden width 4 * d_model.
    """

    reduce: Conv2dKernel
    layers: list
    recover: Conv2dKernel
    context: list
    channels: int = 256
    reduced_channels: int = 32
    roi_height: int = 14
    roi_width: int = 14
    pool_height: int = 3
    pool_width: int = 3
    heads: int = 4
    ffn_hidden: int = field(default=0)  # 0 => 4 * d_model

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.d_model
        if min(self.channels, self.reduced_channels, self.roi_height, self.roi_width,
               self.pool_height, self.pool_width, self.heads, self.ffn_hidden) < 1:
            raise ConfigError("all attention config dimensions must be >= 1")
        if self.pool_height > self.roi_height or self.pool_width > self.roi_width:
            raise ConfigError("pooled size must not exceed the RoI size")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"token width {self.d_model} is not divisible by {self.heads} heads"
            )
        if not self.layers:
            raise ConfigError("at least one encoder layer is required")
        if not self.context:
            raise ConfigError("at least one pyramid-level context kernel is required")
        if (self.reduce.in_channels, self.reduce.out_channels) != (self.channels, self.reduced_channels):
            raise ConfigError("reduce kernel must map channels -> reduced_channels")
        if (self.reduce.kh, self.reduce.kw) != (1, 1):
            raise ConfigError("reduce kernel must be 1 x 1")
        if (self.recover.in_channels, self.recover.out_channels) != (self.reduced_channels, self.channels):
            raise ConfigError("recover kernel must map reduced_channels -> channels")
        if (self.recover.kh, self.recover.kw) != (1, 1):
            raise ConfigError("recover kernel must be 1 x 1")
        for i, kern in enumerate(self.context):
            if kern.out_channels != self.channels or (kern.kh, kern.kw) != (1, 1):
                raise ConfigError(f"context kernel {i} must be a 1 x 1 conv onto {self.channels} channels")
        for layer in self.layers:
            layer.validate(self.d_model, self.ffn_hidden)

    @property
    def d_model(self) -> int:
        return self.pool_height * self.pool_width * self.reduced_channels

    @property
    def encoder_layers(self) -> int:
        return len(self.layers)

    @property
    def pyramid_channels(self) -> list[int]:
        return [kern.in_channels for kern in self.context]

    @classmethod
    def zeros(cls, channels: int = 256, reduced_channels: int = 32,
              roi_size: tuple[int, int] = (14, 14), pool_size: tuple[int, int] = (3, 3),
              encoder_layers: int = 3, heads: int = 4, ffn_hidden: int = 0,
              pyramid_channels=None) -> "AttentionConfig":
        d_model = pool_size[0] * pool_size[1] * reduced_channels
        hidden = ffn_hidden or 4 * d_model
        pyramid_channels = list(pyramid_channels or [channels] * 4)
        return cls(
            reduce=Conv2dKernel.zeros(reduced_channels, channels, 1, 1),
            layers=[EncoderLayer.zeros(d_model, hidden) for _ in range(encoder_layers)],
            recover=Conv2dKernel.zeros(channels, reduced_channels, 1, 1),
            context=[Conv2dKernel.zeros(channels, c, 1, 1) for c in pyramid_channels],
            channels=channels, reduced_channels=reduced_channels,
            roi_height=roi_size[0], roi_width=roi_size[1],
            pool_height=pool_size[0], pool_width=pool_size[1],
            heads=heads, ffn_hidden=hidden,
        )

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int = 256,
               reduced_channels: int = 32, roi_size: tuple[int, int] = (14, 14),
               pool_size: tuple[int, int] = (3, 3), encoder_layers: int = 3,
               heads: int = 4, ffn_hidden: int = 0, pyramid_channels=None,
               scale: float = 0.05, zero_bias: bool = False) -> "AttentionConfig":
        d_model = pool_size[0] * pool_size[1] * reduced_channels
        hidden = ffn_hidden or 4 * d_model
        pyramid_channels = list(pyramid_channels or [channels] * 4)
        bias_scale = 0.0 if zero_bias else scale
        return cls(
            reduce=Conv2dKernel.random(reduced_channels, channels, 1, 1, rng, scale, bias_scale),
            layers=[EncoderLayer.random(d_model, hidden, rng, scale) for _ in range(encoder_layers)],
            recover=Conv2dKernel.random(channels, reduced_channels, 1, 1, rng, scale, bias_scale),
            context=[Conv2dKernel.random(channels, c, 1, 1, rng, scale, bias_scale)
                     for c in pyramid_channels],
            channels=channels, reduced_channels=reduced_channels,
            roi_height=roi_size[0], roi_width=roi_size[1],
            pool_height=pool_size[0], pool_width=pool_size[1],
            heads=heads, ffn_hidden=hidden,
        )


def _check_roi(f, cfg: AttentionConfig) -> Tensor:
    arr = np.ascontiguousarray(np.asarray(f, dtype=np.float64))
    if arr.ndim != 4:
        raise ShapeError(f"RoI features must be (M, C, H, W), got rank {arr.ndim}")
    if arr.shape[0] == 0:
        raise EmptyProposalSet("need at least one instance proposal")
    m, c, h, w = arr.shape
    if c != cfg.channels:
        raise ShapeError(f"RoI channels {c} != configured {cfg.channels}")
    if (h, w) != (cfg.roi_height, cfg.roi_width):
        raise ShapeError(
            f"RoI spatial size {h}x{w} != configured {cfg.roi_height}x{cfg.roi_width}"
        )
    return arr


def roi_to_tokens(f, cfg: AttentionConfig) -> Tensor:
    """Reduce (M, C, H, W) RoI features to M tokens of width d_model.

    Per instance: 1 x 1 conv to reduced channels, adaptive max pool to the
    pooled grid, row-major flatten.
    """
    f = _check_roi(f, cfg)
    m = f.shape[0]
    tokens = np.empty((m, cfg.d_model))
    for i in range(m):
        reduced = conv2d(f[i], cfg.reduce)
        pooled = adaptive_max_pool(reduced, cfg.pool_height, cfg.pool_width)
        tokens[i] = pooled.ravel()
    return tokens


def _self_attention(x: Tensor, layer: EncoderLayer, heads: int):
    m, d = x.shape
    d_head = d // heads
    scale = 1.0 / math.sqrt(d_head)
    q = linear(x, layer.w_query, layer.b_query)
    k = linear(x, layer.w_key, layer.b_key)
    v = linear(x, layer.w_value, layer.b_value)
    mixed = np.empty_like(x)
    maps = np.empty((heads, m, m))
    for h in range(heads):
        sl = slice(h * d_head, (h + 1) * d_head)
        attn = softmax(q[:, sl] @ k[:, sl].T * scale)
        maps[h] = attn
        mixed[:, sl] = attn @ v[:, sl]
    return linear(mixed, layer.w_out, layer.b_out), maps


def transformer_encoder(tokens, cfg: AttentionConfig, return_attention: bool = False):
    """Post-norm encoder stack over a set of instance tokens.

    Each layer: multi-head scaled dot-product self-attention, residual add,
    layer norm, then FFN (linear -> ReLU -> linear), residual add, layer
    norm. No positional encoding. With ``return_attention`` the per-layer
    (heads, M, M) attention maps are returned alongside the tokens.
    """
    x = as_tensor(tokens, "token sequence")
    if x.ndim != 2:
        raise ShapeError(f"token sequence must be (M, d_model), got rank {x.ndim}")
    if x.shape[1] != cfg.d_model:
        raise ShapeError(f"token width {x.shape[1]} != configured d_model {cfg.d_model}")
    attention_maps = []
    for layer in cfg.layers:
        attn_out, maps = _self_attention(x, layer, cfg.heads)
        x = layer_norm(x + attn_out, layer.norm1_gamma, layer.norm1_beta)
        hidden = relu(linear(x, layer.ffn_w1, layer.ffn_b1))
        x = layer_norm(x + linear(hidden, layer.ffn_w2, layer.ffn_b2),
                       layer.norm2_gamma, layer.norm2_beta)
        attention_maps.append(maps)
    if return_attention:
        return x, attention_maps
    return x


def tokens_to_roi(tokens, cfg: AttentionConfig) -> Tensor:
    """Recover (M, C, H, W) maps from tokens: reshape to the pooled grid,
    bilinear upsample to the RoI size, 1 x 1 conv back to full channels."""
    tokens = as_tensor(tokens, "token sequence")
    if tokens.ndim != 2 or tokens.shape[1] != cfg.d_model:
        raise ShapeError(
            f"token sequence must be (M, {cfg.d_model}), got {tuple(tokens.shape)}"
        )
    m = tokens.shape[0]
    out = np.empty((m, cfg.channels, cfg.roi_height, cfg.roi_width))
    for i in range(m):
        grid = tokens[i].reshape(cfg.reduced_channels, cfg.pool_height, cfg.pool_width)
        up = bilinear_upsample(grid, cfg.roi_height, cfg.roi_width)
        out[i] = conv2d(up, cfg.recover)
    return out


def global_context(pyramid, cfg: AttentionConfig) -> Tensor:
    """Sum over levels of spatial-mean(1 x 1 conv(level)): a (C,) vector."""
    if not pyramid:
        raise ShapeError("global context needs at least one pyramid level")
    if len(pyramid) != len(cfg.context):
        raise ShapeError(
            f"got {len(pyramid)} pyramid levels for {len(cfg.context)} context kernels"
        )
    g = np.zeros(cfg.channels)
    for level, kern in zip(pyramid, cfg.context):
        mapped = conv2d(level, kern)
        g = g + mapped.mean(axis=(1, 2))
    return g


def fuse_features(f, enhanced, context_vec) -> Tensor:
    """Element-wise sum of the original RoI features, the recovered maps, and
    the global context vector broadcast over instances and positions."""
    f = as_tensor(f, "roi features")
    enhanced = as_tensor(enhanced, "enhanced features")
    context_vec = as_tensor(context_vec, "context vector")
    if f.ndim != 4:
        raise ShapeError(f"roi features must be (M, C, H, W), got rank {f.ndim}")
    if enhanced.shape != f.shape:
        raise ShapeError(
            f"enhanced features shape {tuple(enhanced.shape)} != roi shape {tuple(f.shape)}"
        )
    if context_vec.shape != (f.shape[1],):
        raise ShapeError(
            f"context vector must have shape ({f.shape[1]},), got {tuple(context_vec.shape)}"
        )
    return f + enhanced + context_vec[None, :, None, None]


def forward(f, pyramid, cfg: AttentionConfig, return_attention: bool = False):
    """Full pipeline: tokens -> encoder -> recovered maps -> fusion.

    Output shape always equals the input RoI shape (M, C, H, W).
    """
    tokens = roi_to_tokens(f, cfg)
    if return_attention:
        encoded, maps = transformer_encoder(tokens, cfg, return_attention=True)
    else:
        encoded = transformer_encoder(tokens, cfg)
    enhanced = tokens_to_roi(encoded, cfg)
    g = global_context(pyramid, cfg)
    fused = fuse_features(_check_roi(f, cfg), enhanced, g)
    if return_attention:
        return fused, maps
    return fused


# ---------------------------------------------------------------------------
# parameter counting and named-tensor serialization

_LAYER_FIELDS = (
    ("query.weight", "w_query"), ("query.bias", "b_query"),
    ("key.weight", "w_key"), ("key.bias", "b_key"),
    ("value.weight", "w_value"), ("value.bias", "b_value"),
    ("out.weight", "w_out"), ("out.bias", "b_out"),
    ("ffn1.weight", "ffn_w1"), ("ffn1.bias", "ffn_b1"),
    ("ffn2.weight", "ffn_w2"), ("ffn2.bias", "ffn_b2"),
    ("norm1.gamma", "norm1_gamma"), ("norm1.beta", "norm1_beta"),
    ("norm2.gamma", "norm2_gamma"), ("norm2.beta", "norm2_beta"),
)


def param_count(cfg: AttentionConfig) -> int:
    total = cfg.reduce.param_count + cfg.recover.param_count
    total += sum(kern.param_count for kern in cfg.context)
    for layer in cfg.layers:
        total += sum(np.asarray(getattr(layer, attr)).size for _, attr in _LAYER_FIELDS)
    return total


def param_breakdown_from_config(config: dict) -> list[tuple[str, int]]:
    dims = _parse_config(config)
    c, c0, d, hidden = dims["channels"], dims["reducedChannels"], dims["dModel"], dims["ffnHidden"]
    rows = [("token reduction (1x1 conv)", c0 * c + c0)]
    per_layer = 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d) + 4 * d
    for i in range(dims["encoderLayers"]):
        rows.append((f"encoder layer {i}", per_layer))
    rows.append(("feature recovery (1x1 conv)", c * c0 + c))
    for i, cl in enumerate(dims["pyramidChannels"]):
        rows.append((f"global context level {i} (1x1 conv)", c * cl + c))
    return rows


def param_count_from_config(config: dict) -> int:
    return sum(n for _, n in param_breakdown_from_config(config))


def _parse_config(config: dict) -> dict:
    try:
        dims = {
            "channels": int(config["channels"]),
            "reducedChannels": int(config["reducedChannels"]),
            "roiHeight": int(config["roiHeight"]),
            "roiWidth": int(config["roiWidth"]),
            "poolHeight": int(config["poolHeight"]),
            "poolWidth": int(config["poolWidth"]),
            "encoderLayers": int(config["encoderLayers"]),
            "heads": int(config["heads"]),
            "pyramidChannels": [int(c) for c in config["pyramidChannels"]],
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid attention config: {exc}") from exc
    dims["dModel"] = dims["poolHeight"] * dims["poolWidth"] * dims["reducedChannels"]
    dims["ffnHidden"] = int(config.get("ffnHidden", 0)) or 4 * dims["dModel"]
    if min(dims["channels"], dims["reducedChannels"], dims["encoderLayers"],
           dims["heads"], dims["ffnHidden"]) < 1 or not dims["pyramidChannels"]:
        raise ConfigError("attention config dimensions must be >= 1")
    if dims["dModel"] % dims["heads"] != 0:
        raise ConfigError(
            f"token width {dims['dModel']} is not divisible by {dims['heads']} heads"
        )
    return dims


def to_named_tensors(cfg: AttentionConfig) -> tuple[dict, dict]:
    config = {
        "channels": cfg.channels,
        "reducedChannels": cfg.reduced_channels,
        "roiHeight": cfg.roi_height,
        "roiWidth": cfg.roi_width,
        "poolHeight": cfg.pool_height,
        "poolWidth": cfg.pool_width,
        "encoderLayers": cfg.encoder_layers,
        "heads": cfg.heads,
        "ffnHidden": cfg.ffn_hidden,
        "pyramidChannels": cfg.pyramid_channels,
    }
    tensors = {"reduce.weight": cfg.reduce.weights, "reduce.bias": cfg.reduce.bias}
    for i, layer in enumerate(cfg.layers):
        for suffix, attr in _LAYER_FIELDS:
            tensors[f"layer{i}.{suffix}"] = np.asarray(getattr(layer, attr))
    tensors["recover.weight"] = cfg.recover.weights
    tensors["recover.bias"] = cfg.recover.bias
    for i, kern in enumerate(cfg.context):
        tensors[f"context{i}.weight"] = kern.weights
        tensors[f"context{i}.bias"] = kern.bias
    return config, tensors


def from_named_tensors(config: dict, tensors: dict) -> AttentionConfig:
    dims = _parse_config(config)

    def grab(name):
        try:
            return tensors[name]
        except KeyError as exc:
            raise ConfigError(f"missing tensor {name}") from exc

    layers = []
    for i in range(dims["encoderLayers"]):
        kwargs = {attr: grab(f"layer{i}.{suffix}") for suffix, attr in _LAYER_FIELDS}
        layers.append(EncoderLayer(**kwargs))
    context = [
        Conv2dKernel(grab(f"context{i}.weight"), grab(f"context{i}.bias"))
        for i in range(len(dims["pyramidChannels"]))
    ]
    return AttentionConfig(
        reduce=Conv2dKernel(grab("reduce.weight"), grab("reduce.bias")),
        layers=layers,
        recover=Conv2dKernel(grab("recover.weight"), grab("recover.bias")),
        context=context,
        channels=dims["channels"], reduced_channels=dims["reducedChannels"],
        roi_height=dims["roiHeight"], roi_width=dims["roiWidth"],
        pool_height=dims["poolHeight"], pool_width=dims["poolWidth"],
        heads=dims["heads"], ffn_hidden=dims["ffnHidden"],
    )
