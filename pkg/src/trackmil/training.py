"""Deterministic training loop with gradient accumulation over bags.

Bags vary in tracklet count and length, so a "batch" is realized by
accumulating gradients over ``batch_size`` bags before each Adam step; since
backward passes sum into the shared parameter gradients, this equals the
gradient of the summed per-bag losses. Bag order per epoch comes from a
seeded permutation, and all initialization streams derive from the same seed,
so identical configurations reproduce bit-identical parameters.

The best checkpoint is selected by validation AUC (ties keep the earlier
epoch).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import ShortTermConfig
from .autodiff import AdamState, adam_step, zero_gradients
from .bag import DEFAULT_LOCALIZATION_THRESHOLD, bag_loss
from .data import Bag
from .errors import ConfigurationError, DivergenceError
from .metrics import evaluate
from .model import ForgeryDetector, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    beta: float = 0.001
    epochs: int = 12
    seed: int = 0
    instance_variant: str = "full"
    bag_variant: str = "attention"
    sparsity_target: str = "gate_scores"
    feature_dim: int = 64
    attention_dim: int = 128
    num_layers: int = 3
    rates: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 3
    bottleneck_divisor: int = 4
    norm_mode: str = "temporal"
    localization_threshold: float = DEFAULT_LOCALIZATION_THRESHOLD
    feature_jitter: float = 0.0  # feature-space stand-in for image augmentation

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.localization_threshold < 1.0:
            raise ConfigurationError(
                f"localization threshold must be in (0, 1), got {self.localization_threshold}"
            )
        if self.feature_jitter < 0:
            raise ConfigurationError(f"feature_jitter must be >= 0, got {self.feature_jitter}")
        self.model_config()  # validates variants, dims, rates

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            feature_dim=self.feature_dim,
            attention_dim=self.attention_dim,
            instance_variant=self.instance_variant,
            bag_variant=self.bag_variant,
            short_term=ShortTermConfig(
                num_layers=self.num_layers,
                rates=self.rates,
                kernel_size=self.kernel_size,
                bottleneck_divisor=self.bottleneck_divisor,
                norm_mode=self.norm_mode,
            ),
        )

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "beta": self.beta,
            "epochs": self.epochs,
            "seed": self.seed,
            "instance_variant": self.instance_variant,
            "bag_variant": self.bag_variant,
            "sparsity_target": self.sparsity_target,
            "feature_dim": self.feature_dim,
            "attention_dim": self.attention_dim,
            "num_layers": self.num_layers,
            "rates": list(self.rates),
            "kernel_size": self.kernel_size,
            "bottleneck_divisor": self.bottleneck_divisor,
            "norm_mode": self.norm_mode,
            "localization_threshold": self.localization_threshold,
            "feature_jitter": self.feature_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "rates" in kwargs:
            kwargs["rates"] = tuple(int(r) for r in kwargs["rates"])
        return cls(**kwargs)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    val_auc: float
    val_map: float | None


@dataclass
class TrainResult:
    best_params: "OrderedDict[str, np.ndarray]"
    best_epoch: int
    best_val_auc: float
    adam_steps: int = 0
    history: list[EpochStats] = field(default_factory=list)


def train_model(
    train_bags: Sequence[Bag],
    val_bags: Sequence[Bag],
    cfg: TrainConfig,
    log: Callable[[str], None] | None = None,
) -> tuple[ForgeryDetector, TrainResult]:
    """Train a fresh model; returns it (at its final state) plus the result.

    ``TrainResult.best_params`` snapshots the epoch with the highest
    validation AUC.
    """
    if not train_bags:
        raise ConfigurationError("no training bags")
    if not val_bags:
        raise ConfigurationError("no validation bags")
    model = ForgeryDetector.create(cfg.model_config(), seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    order_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    jitter_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))

    result = TrainResult(best_params=model.parameter_arrays(), best_epoch=0, best_val_auc=-1.0)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(train_bags))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            zero_gradients(model.params)
            for idx in order[start:start + cfg.batch_size]:
                bag = train_bags[idx]
                features = bag.feature_list()
                if cfg.feature_jitter > 0:
                    features = [
                        x + jitter_rng.normal(scale=cfg.feature_jitter, size=x.shape)
                        for x in features
                    ]
                fwd = model.forward(features)
                loss = bag_loss(
                    fwd.video_logit,
                    fwd.attention_logits,
                    bag.label,
                    beta=cfg.beta,
                    sparsity_target=cfg.sparsity_target,
                )
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss {value} at epoch {epoch}, bag {bag.video_id!r}; "
                        f"training diverged (try a lower lr)"
                    )
                losses.append(value)
                loss.backward()
            adam_step(model.params, state)

        result.adam_steps = state.step
        report, _ = evaluate(model, val_bags, cfg.localization_threshold)
        stats = EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            val_auc=report.video_auc,
            val_map=report.localization_map,
        )
        result.history.append(stats)
        if stats.val_auc > result.best_val_auc:
            result.best_val_auc = stats.val_auc
            result.best_epoch = epoch
            result.best_params = model.parameter_arrays()
        if log is not None:
            map_text = "n/a" if stats.val_map is None else f"{stats.val_map:.4f}"
            log(
                f"epoch {stats.epoch} loss {stats.mean_loss:.4f} "
                f"val_auc {stats.val_auc:.4f} val_map {map_text}"
            )
    return model, result
