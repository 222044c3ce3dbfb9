"""The video-level forgery detector: instance aggregation + attention bag head.

``ForgeryDetector.forward`` builds the differentiable graph for one bag and
returns tensor handles for training; ``predict`` runs the same computation
without a tape and returns a plain-number :class:`ModelOutput`.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .aggregation import (
    INSTANCE_VARIANTS,
    ShortTermConfig,
    aggregate_instance,
    init_short_term_params,
    needs_short_term_params,
    short_term_param_shapes,
)
from .autodiff import Tensor, sigmoid_values
from .bag import (
    BAG_VARIANTS,
    attention_weights,
    bag_aggregate_variant,
    bag_loss,
    classify,
)
from .errors import ConfigurationError, DimensionError, InputError


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    attention_dim: int = 128
    instance_variant: str = "full"
    bag_variant: str = "attention"
    short_term: ShortTermConfig = field(default_factory=ShortTermConfig)

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.attention_dim < 1:
            raise ConfigurationError(f"attention_dim must be >= 1, got {self.attention_dim}")
        if self.instance_variant not in INSTANCE_VARIANTS:
            raise ConfigurationError(
                f"instance_variant must be one of {INSTANCE_VARIANTS}, "
                f"got {self.instance_variant!r}"
            )
        if self.bag_variant not in BAG_VARIANTS:
            raise ConfigurationError(
                f"bag_variant must be one of {BAG_VARIANTS}, got {self.bag_variant!r}"
            )

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "attention_dim": self.attention_dim,
            "instance_variant": self.instance_variant,
            "bag_variant": self.bag_variant,
            "num_layers": self.short_term.num_layers,
            "rates": list(self.short_term.rates),
            "kernel_size": self.short_term.kernel_size,
            "bottleneck_divisor": self.short_term.bottleneck_divisor,
            "norm_mode": self.short_term.norm_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            feature_dim=int(d["feature_dim"]),
            attention_dim=int(d["attention_dim"]),
            instance_variant=d["instance_variant"],
            bag_variant=d["bag_variant"],
            short_term=ShortTermConfig(
                num_layers=int(d["num_layers"]),
                rates=tuple(int(r) for r in d["rates"]),
                kernel_size=int(d["kernel_size"]),
                bottleneck_divisor=int(d["bottleneck_divisor"]),
                norm_mode=d["norm_mode"],
            ),
        )


@dataclass
class BagForward:
    """Tensor handles from one bag's forward pass (training path)."""

    video_logit: Tensor
    attention: Tensor
    attention_logits: Tensor
    bag_feature: Tensor


@dataclass
class ModelOutput:
    """Numeric results for one bag."""

    probability: float
    logit: float
    attention: np.ndarray
    attention_logits: np.ndarray
    gate_scores: np.ndarray
    bag_feature: np.ndarray


def expected_param_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    if needs_short_term_params(config.instance_variant):
        shapes.update(short_term_param_shapes(config.feature_dim, config.short_term))
    shapes["attention.weight"] = (config.feature_dim, config.attention_dim)
    shapes["attention.vector"] = (config.attention_dim, 1)
    shapes["classifier.weight"] = (config.feature_dim, 1)
    shapes["classifier.bias"] = (1, 1)
    return shapes


class ForgeryDetector:
    """Multiple-instance attention model over a bag of tracklet matrices."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = expected_param_shapes(config)
        for name, shape in expected.items():
            got = params.get(name)
            if got is None:
                raise ConfigurationError(f"missing model parameter {name!r}")
            if got.shape != shape:
                raise ConfigurationError(
                    f"model parameter {name!r} has shape {got.shape}, expected {shape}"
                )
        extra = set(params) - set(expected)
        if extra:
            raise ConfigurationError(f"unexpected model parameters: {sorted(extra)}")
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "ForgeryDetector":
        """Freshly initialized model; deterministic for a given seed."""
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        params: dict[str, Tensor] = {}
        if needs_short_term_params(config.instance_variant):
            params.update(init_short_term_params(config.feature_dim, config.short_term, rng))
        d, c = config.feature_dim, config.attention_dim
        bound_d = math.sqrt(1.0 / d)
        bound_c = math.sqrt(1.0 / c)
        params["attention.weight"] = Tensor(
            rng.uniform(-bound_d, bound_d, size=(d, c)), requires_grad=True
        )
        params["attention.vector"] = Tensor(
            rng.uniform(-bound_c, bound_c, size=(c, 1)), requires_grad=True
        )
        params["classifier.weight"] = Tensor(
            rng.uniform(-bound_d, bound_d, size=(d, 1)), requires_grad=True
        )
        params["classifier.bias"] = Tensor(np.zeros((1, 1)), requires_grad=True)
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ForgeryDetector":
        """Rebuild a model from checkpointed parameter arrays."""
        params = {name: Tensor(arr.copy(), requires_grad=True) for name, arr in arrays.items()}
        return cls(config, params)

    def parameter_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self.params.items())

    def _check_tracklets(self, tracklets: Sequence[np.ndarray]) -> None:
        if len(tracklets) == 0:
            raise InputError("a bag needs at least one tracklet")
        for x in tracklets:
            if x.ndim != 2 or x.shape[0] != self.config.feature_dim:
                raise DimensionError(
                    f"tracklet features must be {self.config.feature_dim} x T, "
                    f"got shape {x.shape}"
                )
            if x.shape[1] < 1:
                raise DimensionError("tracklet must contain at least one frame")

    def forward(self, tracklets: Sequence[np.ndarray]) -> BagForward:
        """Differentiable forward pass over one bag of ``D x T`` arrays."""
        self._check_tracklets(tracklets)
        cfg = self.config
        descriptors = [
            aggregate_instance(Tensor(x), cfg.short_term, self.params, cfg.instance_variant)
            for x in tracklets
        ]
        attention, logits = attention_weights(
            descriptors, self.params["attention.weight"], self.params["attention.vector"]
        )
        bag_feature = bag_aggregate_variant(descriptors, cfg.bag_variant, attention)
        video_logit = classify(
            bag_feature, self.params["classifier.weight"], self.params["classifier.bias"]
        )
        return BagForward(video_logit, attention, logits, bag_feature)

    @staticmethod
    def output(fwd: BagForward) -> ModelOutput:
        logit = fwd.video_logit.data[0, 0]
        e = fwd.attention_logits.data[:, 0].copy()
        return ModelOutput(
            probability=float(sigmoid_values(logit)),
            logit=float(logit),
            attention=fwd.attention.data[:, 0].copy(),
            attention_logits=e,
            gate_scores=sigmoid_values(e),
            bag_feature=fwd.bag_feature.data[:, 0].copy(),
        )

    def predict(self, tracklets: Sequence[np.ndarray]) -> ModelOutput:
        """Inference without tape recording; safe to call concurrently."""
        with ad.no_grad():
            return self.output(self.forward(tracklets))


def compute_loss(
    output: ModelOutput,
    label: int,
    beta: float = 0.001,
    sparsity_target: str = "gate_scores",
) -> float:
    """Loss value recomputed from a numeric :class:`ModelOutput`."""
    with ad.no_grad():
        return bag_loss(
            Tensor([[output.logit]]),
            Tensor(output.attention_logits[:, None]),
            label,
            beta=beta,
            sparsity_target=sparsity_target,
        ).item()
