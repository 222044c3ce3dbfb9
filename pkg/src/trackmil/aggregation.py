"""Multi-temporal-scale aggregation of one tracklet into a compact descriptor.

A tracklet arrives as a ``D x T`` matrix whose columns are per-frame feature
vectors. Three stages condense it into a ``D x 1`` descriptor:

1. short-term: a stack of densely connected dilated temporal convolutions.
   Layer ``l`` consumes the row-concatenation of the raw input and every
   previous layer's output (``l*D`` channels) and emits ``D`` channels through
   a norm-relu-conv(1x1) bottleneck, a norm-relu-conv(k=3, dilated) step, and
   a norm-conv(1x1) projection. With rates (1, 2, 4) the receptive half-width
   is 1 + 2 + 4 = 7 frames.
2. long-term: dot-product self-attention over time, added residually.
3. global: max over time.

Ablation variants replace parts of this pipeline with plain pooling.

Normalization inside the convolution layers defaults to ``temporal`` mode
(per-channel statistics over the tracklet's frames, the within-tracklet
replacement for batch normalization). Removing each channel's temporal mean
discards static appearance offsets and leaves temporal structure, which is
what the stack is after; the cost is that the shared statistics couple every
output frame weakly (order 1/T) to every input frame. ``frame`` mode
(statistics over channels within one time step) keeps the stack strictly
local in time, making the receptive-field bound above literally testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError

INSTANCE_VARIANTS = ("full", "max_pool_only", "avg_pool_only", "no_short_term", "no_long_term")
NORM_MODES = ("frame", "temporal")


@dataclass(frozen=True)
class ShortTermConfig:
    """Shape of the short-term aggregation stack."""

    num_layers: int = 3
    rates: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 3
    bottleneck_divisor: int = 4
    norm_mode: str = "temporal"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError(f"num_layers must be >= 1, got {self.num_layers}")
        if len(self.rates) != self.num_layers:
            raise ConfigurationError(
                f"{self.num_layers} layers need {self.num_layers} dilation rates, "
                f"got {self.rates}"
            )
        if any(r < 1 for r in self.rates):
            raise ConfigurationError(f"dilation rates must be >= 1, got {self.rates}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {self.kernel_size}")
        if self.bottleneck_divisor < 1:
            raise ConfigurationError(
                f"bottleneck divisor must be >= 1, got {self.bottleneck_divisor}"
            )
        if self.norm_mode not in NORM_MODES:
            raise ConfigurationError(
                f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}"
            )

    def bottleneck_width(self, layer: int, feature_dim: int) -> int:
        return math.ceil(layer * feature_dim / self.bottleneck_divisor)

    def receptive_half_width(self) -> int:
        return (self.kernel_size - 1) // 2 * sum(self.rates)


def _norm_op(cfg: ShortTermConfig) -> Callable[[Tensor, Tensor, Tensor], Tensor]:
    return ad.frame_norm if cfg.norm_mode == "frame" else ad.channel_norm


def _uniform(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> Tensor:
    """Fan-in scaled uniform initialization."""
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


@lru_cache(maxsize=32)
def short_term_param_shapes(feature_dim: int, cfg: ShortTermConfig) -> dict[str, tuple[int, int]]:
    """Expected parameter shapes, keyed for checkpointing and validation."""
    shapes: dict[str, tuple[int, int]] = {}
    k = cfg.kernel_size
    for layer in range(1, cfg.num_layers + 1):
        d_in = layer * feature_dim
        d_mid = cfg.bottleneck_width(layer, feature_dim)
        prefix = f"short_term.layer{layer}"
        shapes[f"{prefix}.norm1.scale"] = (d_in, 1)
        shapes[f"{prefix}.norm1.shift"] = (d_in, 1)
        shapes[f"{prefix}.conv1.weight"] = (d_mid, d_in)
        shapes[f"{prefix}.norm2.scale"] = (d_mid, 1)
        shapes[f"{prefix}.norm2.shift"] = (d_mid, 1)
        shapes[f"{prefix}.conv2.weight"] = (d_mid, d_mid * k)
        shapes[f"{prefix}.norm3.scale"] = (d_mid, 1)
        shapes[f"{prefix}.norm3.shift"] = (d_mid, 1)
        shapes[f"{prefix}.conv3.weight"] = (feature_dim, d_mid)
    return shapes


def init_short_term_params(
    feature_dim: int, cfg: ShortTermConfig, rng: np.random.Generator
) -> dict[str, Tensor]:
    """Fresh short-term stack parameters.

    Convolution weights use fan-in uniform init (bound ``sqrt(1/(C_in * k))``,
    the weight's column count); norm scales start at 1 and shifts at 0.
    """
    params: dict[str, Tensor] = {}
    for name, (rows, cols) in short_term_param_shapes(feature_dim, cfg).items():
        if name.endswith(".scale"):
            params[name] = Tensor(np.ones((rows, cols)), requires_grad=True)
        elif name.endswith(".shift"):
            params[name] = Tensor(np.zeros((rows, cols)), requires_grad=True)
        else:
            params[name] = _uniform(rng, rows, cols, fan_in=cols)
    return params


def _check_layer_params(params: dict[str, Tensor], feature_dim: int, cfg: ShortTermConfig) -> None:
    for name, shape in short_term_param_shapes(feature_dim, cfg).items():
        got = params.get(name)
        if got is None:
            raise ConfigurationError(f"missing short-term parameter {name!r}")
        if got.shape != shape:
            raise ConfigurationError(
                f"short-term parameter {name!r} has shape {got.shape}, expected {shape}"
            )


def short_term_aggregate(x: Tensor, cfg: ShortTermConfig, params: dict[str, Tensor]) -> Tensor:
    """Densely connected dilated convolution stack; ``D x T`` in, ``D x T`` out."""
    _check_layer_params(params, x.rows, cfg)
    norm = _norm_op(cfg)
    outputs = [x]
    for layer in range(1, cfg.num_layers + 1):
        p = f"short_term.layer{layer}"
        h = outputs[0] if layer == 1 else ad.concat_rows(outputs)
        h = norm(h, params[f"{p}.norm1.scale"], params[f"{p}.norm1.shift"])
        h = ad.relu(h)
        h = ad.conv1d_dilated(h, params[f"{p}.conv1.weight"], kernel_size=1, dilation=1)
        h = norm(h, params[f"{p}.norm2.scale"], params[f"{p}.norm2.shift"])
        h = ad.relu(h)
        h = ad.conv1d_dilated(
            h, params[f"{p}.conv2.weight"], kernel_size=cfg.kernel_size, dilation=cfg.rates[layer - 1]
        )
        h = norm(h, params[f"{p}.norm3.scale"], params[f"{p}.norm3.shift"])
        h = ad.conv1d_dilated(h, params[f"{p}.conv3.weight"], kernel_size=1, dilation=1)
        outputs.append(h)
    return outputs[-1]


def long_term_aggregate(s: Tensor) -> Tensor:
    """Self-attention over time with a residual connection.

    The affinity between every pair of frames is their raw dot product,
    column-normalized with softmax; the attention summary is added back:
    ``S @ softmax_columns(S^T S) + S``.
    """
    affinity = ad.softmax_columns(ad.matmul(ad.transpose(s), s))
    return ad.add(ad.matmul(s, affinity), s)


def global_aggregate(features: Tensor) -> Tensor:
    """Max over time: ``D x T`` down to ``D x 1``."""
    return ad.maxpool_time(features)


def aggregate_instance(
    x: Tensor,
    cfg: ShortTermConfig,
    params: dict[str, Tensor],
    variant: str = "full",
) -> Tensor:
    """Tracklet matrix to ``D x 1`` descriptor, under the selected variant."""
    if variant == "full":
        return global_aggregate(long_term_aggregate(short_term_aggregate(x, cfg, params)))
    if variant == "max_pool_only":
        return ad.maxpool_time(x)
    if variant == "avg_pool_only":
        return ad.meanpool_time(x)
    if variant == "no_short_term":
        return global_aggregate(long_term_aggregate(x))
    if variant == "no_long_term":
        return global_aggregate(short_term_aggregate(x, cfg, params))
    raise ConfigurationError(
        f"unknown instance aggregation variant {variant!r}; expected one of {INSTANCE_VARIANTS}"
    )


def needs_short_term_params(variant: str) -> bool:
    if variant not in INSTANCE_VARIANTS:
        raise ConfigurationError(
            f"unknown instance aggregation variant {variant!r}; expected one of {INSTANCE_VARIANTS}"
        )
    return variant in ("full", "no_long_term")
