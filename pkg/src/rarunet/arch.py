"""RAR-U-Net building blocks and model assembly.

The network is a four-level U-Net with three independently switchable
additions:

* residual encoders: the blocks that receive downsampled features keep their
  input and concatenate it with the output of their two convolutions;
* residual skips: every skip connection passes through a chain of residual
  units (4, 3, 2, 1 of them from the shallowest level down) before it is
  concatenated with the upsampled decoder feature;
* attention decoders: each decoder level ends with a spatial gate followed by
  a channel gate, both sigmoid maps built from summed mean- and max-pooled
  features.

With all three switched off the model is a plain U-Net.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ops import (
    add,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2d,
    mul,
    reduce,
    relu,
    sigmoid,
)
from .optim import ParamSet
from .tensor import ShapeError, Tensor, no_grad

ATTENTION_REDUCTION = 8
ATTENTION_KERNEL = 7


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters and ablation switches.

    ``encoder_concat`` picks the channel bookkeeping of residual encoder
    blocks: ``"wide"`` keeps the second convolution at the level width and
    concatenates the block input on top of it; ``"narrow"`` shrinks the second
    convolution so the concatenation lands exactly on the level width.
    ``attention_transform="learned"`` inserts a shared two-layer channel MLP
    and a 7x7 spatial convolution on the pooled maps; ``"none"`` feeds the
    pooled sums straight into the sigmoids.
    """

    in_channels: int = 1
    out_channels: int = 1
    base_channels: int = 32
    depth: int = 4
    skip_block_counts: Tuple[int, ...] = (4, 3, 2, 1)
    use_residual_encoders: bool = True
    use_residual_skips: bool = True
    use_attention_decoders: bool = True
    encoder_concat: str = "wide"
    attention_transform: str = "learned"

    def __post_init__(self):
        object.__setattr__(self, "skip_block_counts", tuple(int(n) for n in self.skip_block_counts))
        if self.depth != 4:
            raise ValueError(f"depth is fixed at 4, got {self.depth}")
        if len(self.skip_block_counts) != self.depth or min(self.skip_block_counts) < 1:
            raise ValueError(f"skip_block_counts needs {self.depth} entries >= 1, got {self.skip_block_counts}")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.encoder_concat not in ("wide", "narrow"):
            raise ValueError(f"encoder_concat must be 'wide' or 'narrow', got {self.encoder_concat!r}")
        if self.attention_transform not in ("learned", "none"):
            raise ValueError(f"attention_transform must be 'learned' or 'none', got {self.attention_transform!r}")

    def widths(self) -> List[int]:
        """Convolution widths of levels 1..4 and the bottleneck."""
        return [self.base_channels * 2 ** i for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skip_block_counts"] = list(self.skip_block_counts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {', '.join(sorted(unknown))}")
        return cls(**d)


# ---------------------------------------------------------------- blocks

def conv3x3_relu(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    return relu(conv2d(x, weight, bias, padding=weight.shape[-1] // 2))


def residual_encoder_block(x: Tensor, conv1, conv2, residual: bool) -> Tensor:
    """Two 3x3 conv + ReLU layers, optionally concatenated with their input.

    ``conv1`` and ``conv2`` are (weight, bias) pairs. With ``residual`` the
    output is ``concat_channels(x, b)``, so its first channels are ``x``
    unchanged.
    """
    a = conv3x3_relu(x, *conv1)
    b = conv3x3_relu(a, *conv2)
    return concat_channels(x, b) if residual else b


def residual_unit(x: Tensor, weight: Tensor, bias: Optional[Tensor], shortcut=None) -> Tensor:
    """relu(relu(conv3x3(x)) + shortcut(x)); the shortcut is a 1x1 conv or identity."""
    branch = conv3x3_relu(x, weight, bias)
    skip = x if shortcut is None else conv2d(x, *shortcut)
    return relu(add(branch, skip))


def residual_block_path(x: Tensor, blocks: Sequence) -> Tensor:
    """Chain of residual units; ``blocks`` holds one (weight, bias) pair per unit."""
    if len(blocks) < 1:
        raise ValueError("residual_block_path needs at least one block")
    for weight, bias in blocks:
        x = residual_unit(x, weight, bias)
    return x


def spatial_attention(f: Tensor, kernel: Optional[Tensor] = None) -> Tensor:
    """Per-pixel gate in (0, 1), shape N x 1 x H x W.

    Without ``kernel`` this is sigmoid(mean_c(F) + max_c(F)). With a
    1 x 2 x k x k ``kernel`` the two pooled maps are each convolved (one
    kernel slice per map) before they are summed.
    """
    avg = reduce(f, "channel", "mean")
    mx = reduce(f, "channel", "max")
    if kernel is None:
        return sigmoid(add(avg, mx))
    pooled = concat_channels(avg, mx)
    return sigmoid(conv2d(pooled, kernel, None, padding=kernel.shape[-1] // 2))


def _shared_mlp(v: Tensor, mlp) -> Tensor:
    w1, b1, w2, b2 = mlp
    return conv2d(relu(conv2d(v, w1, b1)), w2, b2)


def channel_attention(f: Tensor, mlp=None) -> Tensor:
    """Per-channel gate in (0, 1), shape N x C x 1 x 1.

    Without ``mlp`` this is sigmoid(mean_hw(F) + max_hw(F)); otherwise both
    pooled vectors go through the same two 1x1-conv layers first.
    """
    avg = reduce(f, "spatial", "mean")
    mx = reduce(f, "spatial", "max")
    if mlp is None:
        return sigmoid(add(avg, mx))
    return sigmoid(add(_shared_mlp(avg, mlp), _shared_mlp(mx, mlp)))


def attention_refine(f: Tensor, kernel: Optional[Tensor] = None, mlp=None) -> Tensor:
    """Spatial gate, then channel gate computed on the spatially gated map."""
    gated = mul(f, spatial_attention(f, kernel))
    return mul(gated, channel_attention(gated, mlp))


def decoder_block(
    skip: Tensor,
    below: Tensor,
    up,
    conv1,
    conv2,
    skip_blocks: Optional[Sequence] = None,
    attention: bool = False,
    kernel: Optional[Tensor] = None,
    mlp=None,
) -> Tensor:
    """Upsample ``below``, join it with the (optionally refined) skip, convolve twice."""
    if skip.shape[2] != 2 * below.shape[2] or skip.shape[3] != 2 * below.shape[3]:
        raise ShapeError(
            f"decoder_block: skip spatial size {skip.shape[2:]} is not twice {below.shape[2:]}"
        )
    u = conv_transpose2d(below, *up)
    s = residual_block_path(skip, skip_blocks) if skip_blocks else skip
    y = conv3x3_relu(concat_channels(s, u), *conv1)
    y = conv3x3_relu(y, *conv2)
    if attention:
        y = attention_refine(y, kernel, mlp)
    return y


# ---------------------------------------------------------------- model

@dataclass
class _ParamPlan:
    shape: Tuple[int, ...]
    fan_in: int
    block: str
    is_bias: bool


def plan_parameters(config: ArchConfig) -> Dict[str, _ParamPlan]:
    """Every parameter the wired network uses, with its shape and owning block."""
    plan: Dict[str, _ParamPlan] = {}

    def conv(block: str, name: str, cin: int, cout: int, k: int, bias: bool = True):
        plan[f"{block}.{name}.weight"] = _ParamPlan((cout, cin, k, k), cin * k * k, block, False)
        if bias:
            plan[f"{block}.{name}.bias"] = _ParamPlan((cout,), cin * k * k, block, True)

    w = config.widths()
    skip_channels = []
    c = config.in_channels
    for level in range(1, config.depth + 2):
        block = "bottleneck" if level == config.depth + 1 else f"enc{level}"
        width = w[level - 1]
        residual = config.use_residual_encoders and level > 1
        conv(block, "conv1", c, width, 3)
        if residual and config.encoder_concat == "narrow":
            if width - c < 1:
                raise ValueError(f"narrow residual encoder at {block} leaves no channels for conv2")
            conv(block, "conv2", width, width - c, 3)
            c = width
        elif residual:
            conv(block, "conv2", width, width, 3)
            c = c + width
        else:
            conv(block, "conv2", width, width, 3)
            c = width
        if level <= config.depth:
            skip_channels.append(c)

    below = c
    for level in range(config.depth, 0, -1):
        block = f"dec{level}"
        width = w[level - 1]
        sc = skip_channels[level - 1]
        plan[f"{block}.up.weight"] = _ParamPlan((below, width, 2, 2), below, block, False)
        plan[f"{block}.up.bias"] = _ParamPlan((width,), below, block, True)
        if config.use_residual_skips:
            for i in range(1, config.skip_block_counts[level - 1] + 1):
                conv(f"skip{level}", f"block{i}", sc, sc, 3)
        conv(block, "conv1", sc + width, width, 3)
        conv(block, "conv2", width, width, 3)
        if config.use_attention_decoders and config.attention_transform == "learned":
            hidden = max(1, width // ATTENTION_REDUCTION)
            k = ATTENTION_KERNEL
            plan[f"{block}.att.spatial.weight"] = _ParamPlan((1, 2, k, k), 2 * k * k, block, False)
            conv(block, "att.fc1", width, hidden, 1)
            conv(block, "att.fc2", hidden, width, 1)
        below = width
    conv("head", "out", w[0], config.out_channels, 1)
    return plan


class RARUNet:
    """A built network: configuration, parameters and block wiring.

    Parameters are drawn once from ``numpy.random.default_rng(seed)`` in
    lexicographic name order: weights uniform in +-sqrt(6 / fan_in), biases
    zero.
    """

    def __init__(self, config: ArchConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.seed = seed
        plan = plan_parameters(config)
        self.blocks: Dict[str, List[str]] = {}
        for name, p in plan.items():
            self.blocks.setdefault(p.block, []).append(name)
        rng = np.random.default_rng(seed)
        self.params = ParamSet()
        for name in sorted(plan):
            p = plan[name]
            if p.is_bias:
                values = np.zeros(p.shape)
            else:
                bound = np.sqrt(6.0 / p.fan_in)
                values = rng.uniform(-bound, bound, size=p.shape)
            self.params.add(name, Tensor(values.astype(self.dtype)))

    def _conv(self, prefix: str):
        return self.params[f"{prefix}.weight"], self.params.get(f"{prefix}.bias")

    def forward(self, x) -> Tensor:
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        elif x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected N x {cfg.in_channels} x H x W input, got {x.shape}")
        h, w = x.shape[2:]
        if h % 16 or w % 16:
            raise ShapeError(f"input size {h}x{w} must be a multiple of 16 (four poolings)")

        skips = []
        feat = x
        for level in range(1, cfg.depth + 2):
            block = "bottleneck" if level == cfg.depth + 1 else f"enc{level}"
            residual = cfg.use_residual_encoders and level > 1
            feat = residual_encoder_block(feat, self._conv(f"{block}.conv1"), self._conv(f"{block}.conv2"), residual)
            if level <= cfg.depth:
                skips.append(feat)
                feat = maxpool2d(feat)

        for level in range(cfg.depth, 0, -1):
            block = f"dec{level}"
            skip_blocks = None
            if cfg.use_residual_skips:
                skip_blocks = [
                    self._conv(f"skip{level}.block{i}") for i in range(1, cfg.skip_block_counts[level - 1] + 1)
                ]
            kernel = mlp = None
            if cfg.use_attention_decoders and cfg.attention_transform == "learned":
                kernel = self.params[f"{block}.att.spatial.weight"]
                mlp = (*self._conv(f"{block}.att.fc1"), *self._conv(f"{block}.att.fc2"))
            feat = decoder_block(
                skips[level - 1],
                feat,
                self._conv(f"{block}.up"),
                self._conv(f"{block}.conv1"),
                self._conv(f"{block}.conv2"),
                skip_blocks=skip_blocks,
                attention=cfg.use_attention_decoders,
                kernel=kernel,
                mlp=mlp,
            )
        return sigmoid(conv2d(feat, *self._conv("head.out")))

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Foreground probabilities for an N x C x H x W array, without building graphs."""
        outs = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunk = Tensor(np.asarray(images[start:start + batch_size], dtype=self.dtype))
                outs.append(self.forward(chunk).data)
        return np.concatenate(outs, axis=0)


def build_model(config: ArchConfig, seed: int = 0, dtype=np.float32) -> RARUNet:
    return RARUNet(config, seed=seed, dtype=dtype)


def param_count(model_or_config) -> int:
    """Number of trainable scalars, from a built model or straight from a config."""
    if isinstance(model_or_config, RARUNet):
        return model_or_config.params.count()
    return int(sum(np.prod(p.shape) for p in plan_parameters(model_or_config).values()))


__all__ = [
    "ArchConfig",
    "RARUNet",
    "attention_refine",
    "build_model",
    "channel_attention",
    "decoder_block",
    "param_count",
    "plan_parameters",
    "residual_block_path",
    "residual_encoder_block",
    "residual_unit",
    "spatial_attention",
]
