"""Domain-adversarial quality scoring for synthesized faces.

Generative models improve as training proceeds, so a sample drawn at
iteration ``n`` of ``N`` gets the pseudo quality label ``0.9 * n / N`` instead
of a human annotation. A small regression network learns these scores; to
keep its features from latching onto generator-specific artifacts, a domain
classifier head is attached through a gradient-reversal layer, which trains
the head normally while pushing the shared trunk *away* from domain-separable
features. The trunk thus receives exactly ``grad(|s_hat - s|) - alpha *
grad(CE)``.

The synthetic corpus stands in for generator snapshots: each sample is a
clean prototype plus noise whose magnitude shrinks as the score grows, plus a
fixed per-domain nuisance pattern that is deliberately easy to classify from
raw features.

Tracklets are gated on the mean predicted score: kept only if it is strictly
greater than 0.6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, zero_gradients
from .errors import ConfigurationError, InputError

QUALITY_GATE = 0.6
SCORE_CAP = 0.9


def pseudo_score(n: int, max_iterations: int) -> float:
    """Pseudo quality label for a sample drawn at iteration ``n`` of ``N``."""
    if max_iterations <= 0:
        raise InputError(f"max_iterations must be positive, got {max_iterations}")
    if not 0 <= n <= max_iterations:
        raise InputError(f"iteration {n} outside [0, {max_iterations}]")
    return SCORE_CAP * n / max_iterations


@dataclass
class QualitySample:
    features: np.ndarray  # F x 1 column
    score: float
    domain: int


@dataclass(frozen=True)
class QualityCorpusConfig:
    samples: int = 6000
    feature_dim: int = 256
    num_domains: int = 3
    max_iterations: int = 5000  # grid of iteration counts the scores come from
    pattern_scale: float = 1.0

    def __post_init__(self):
        if self.samples < 1 or self.feature_dim < 1:
            raise ConfigurationError("samples and feature_dim must be positive")
        if self.num_domains < 2:
            raise ConfigurationError(f"need >= 2 domains, got {self.num_domains}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")


def generate_quality_corpus(cfg: QualityCorpusConfig, seed: int = 0) -> list[QualitySample]:
    """Synthetic scored samples with a domain nuisance, deterministic per seed.

    ``features = prototype + (0.9 - s) * noise + pattern[domain]``: the noise
    magnitude encodes the score, the additive pattern encodes the domain, and
    the two are statistically independent.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    prototype = rng.normal(size=(cfg.feature_dim, 1))
    patterns = [
        rng.normal(size=(cfg.feature_dim, 1)) * cfg.pattern_scale
        for _ in range(cfg.num_domains)
    ]
    corpus = []
    for _ in range(cfg.samples):
        n = int(rng.integers(0, cfg.max_iterations + 1))
        s = pseudo_score(n, cfg.max_iterations)
        domain = int(rng.integers(cfg.num_domains))
        noise = rng.normal(size=(cfg.feature_dim, 1))
        features = prototype + (SCORE_CAP - s) * noise + patterns[domain]
        corpus.append(QualitySample(features, s, domain))
    return corpus


@dataclass(frozen=True)
class QualityNetConfig:
    feature_dim: int = 256
    hidden_dim: int = 64
    num_domains: int = 3
    alpha: float = 0.1  # adversarial coefficient; 0 disables the reversal

    def __post_init__(self):
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ConfigurationError("feature_dim and hidden_dim must be positive")
        if self.num_domains < 2:
            raise ConfigurationError(f"need >= 2 domains, got {self.num_domains}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "num_domains": self.num_domains,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QualityNetConfig":
        return cls(
            feature_dim=int(d["feature_dim"]),
            hidden_dim=int(d["hidden_dim"]),
            num_domains=int(d["num_domains"]),
            alpha=float(d["alpha"]),
        )


class QualityNet:
    """Two-stage relu trunk with a sigmoid quality head and a domain head."""

    def __init__(self, config: QualityNetConfig, params: dict[str, Tensor]):
        expected = self.param_shapes(config)
        for name, shape in expected.items():
            got = params.get(name)
            if got is None:
                raise ConfigurationError(f"missing quality net parameter {name!r}")
            if got.shape != shape:
                raise ConfigurationError(
                    f"quality net parameter {name!r} has shape {got.shape}, expected {shape}"
                )
        self.config = config
        self.params = params

    @staticmethod
    def param_shapes(config: QualityNetConfig) -> dict[str, tuple[int, int]]:
        f, h, d = config.feature_dim, config.hidden_dim, config.num_domains
        return {
            "trunk.w1": (h, f),
            "trunk.b1": (h, 1),
            "trunk.w2": (h, h),
            "trunk.b2": (h, 1),
            "quality.weight": (1, h),
            "quality.bias": (1, 1),
            "domain.weight": (d, h),
            "domain.bias": (d, 1),
        }

    @classmethod
    def create(cls, config: QualityNetConfig, seed: int = 0) -> "QualityNet":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        params: dict[str, Tensor] = {}
        for name, (rows, cols) in cls.param_shapes(config).items():
            if name.endswith(("b1", "b2", "bias")):
                params[name] = Tensor(np.zeros((rows, cols)), requires_grad=True)
            else:
                bound = math.sqrt(1.0 / cols)
                params[name] = Tensor(
                    rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True
                )
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: QualityNetConfig, arrays: dict[str, np.ndarray]) -> "QualityNet":
        params = {name: Tensor(arr.copy(), requires_grad=True) for name, arr in arrays.items()}
        return cls(config, params)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def trunk(self, features: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(p["trunk.w1"], features), p["trunk.b1"]))
        return ad.relu(ad.add(ad.matmul(p["trunk.w2"], h), p["trunk.b2"]))

    def quality_logit(self, trunk_out: Tensor) -> Tensor:
        p = self.params
        return ad.add(ad.matmul(p["quality.weight"], trunk_out), p["quality.bias"])

    def domain_logits(self, trunk_out: Tensor) -> Tensor:
        p = self.params
        return ad.add(ad.matmul(p["domain.weight"], trunk_out), p["domain.bias"])

    def score(self, features: np.ndarray) -> float:
        """Predicted quality in [0, 1] (sigmoid-bounded)."""
        with ad.no_grad():
            h = self.trunk(Tensor(np.asarray(features, dtype=np.float64).reshape(-1, 1)))
            return ad.sigmoid(self.quality_logit(h)).item()

    def predict_domain(self, features: np.ndarray) -> int:
        with ad.no_grad():
            h = self.trunk(Tensor(np.asarray(features, dtype=np.float64).reshape(-1, 1)))
            return int(np.argmax(self.domain_logits(h).data[:, 0]))


def quality_loss(net: QualityNet, sample: QualitySample) -> tuple[Tensor, float, bool]:
    """Combined graph loss for one sample.

    The quality head minimizes ``|s_hat - s|``; the domain head minimizes its
    cross-entropy on trunk features passed through gradient reversal (scaled
    by alpha), so the trunk's gradient is ``grad(l1) - alpha * grad(CE)``
    while the head itself still learns to classify. With ``alpha = 0`` the
    domain head trains on detached features and the trunk sees the pure
    regression gradient.

    Returns the loss tensor plus the absolute score error and whether the
    domain prediction was correct (both for logging).
    """
    h = net.trunk(Tensor(sample.features))
    predicted = ad.sigmoid(net.quality_logit(h))
    l1 = ad.l1_norm(ad.sub(predicted, Tensor([[sample.score]])))
    alpha = net.config.alpha
    domain_in = ad.gradient_reversal(h, alpha) if alpha > 0 else h.detach()
    domain = net.domain_logits(domain_in)
    loss = ad.add(l1, ad.cross_entropy(domain, sample.domain))
    abs_err = abs(predicted.item() - sample.score)
    correct = int(np.argmax(domain.data[:, 0])) == sample.domain
    return loss, abs_err, correct


@dataclass
class QualityEpochStats:
    epoch: int
    holdout_mae: float
    holdout_domain_accuracy: float


def train_quality_net(
    corpus: Sequence[QualitySample],
    net: QualityNet,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 16,
    holdout_fraction: float = 1.0 / 6.0,
    seed: int = 0,
    log=None,
) -> list[QualityEpochStats]:
    """Adam-train the net; returns held-out MAE / domain accuracy per epoch."""
    if not corpus:
        raise InputError("quality corpus is empty")
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigurationError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    split = rng.permutation(len(corpus))
    n_holdout = max(1, int(len(corpus) * holdout_fraction))
    holdout = [corpus[i] for i in split[:n_holdout]]
    train = [corpus[i] for i in split[n_holdout:]]
    if not train:
        raise InputError("corpus too small for the requested holdout fraction")

    state = AdamState(lr=lr)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            zero_gradients(net.params)
            for idx in order[start:start + batch_size]:
                loss, _, _ = quality_loss(net, train[idx])
                loss.backward()
            adam_step(net.params, state)
        errors, correct = [], 0
        for sample in holdout:
            errors.append(abs(net.score(sample.features) - sample.score))
            correct += int(net.predict_domain(sample.features) == sample.domain)
        stats = QualityEpochStats(
            epoch=epoch,
            holdout_mae=float(np.mean(errors)),
            holdout_domain_accuracy=correct / len(holdout),
        )
        history.append(stats)
        if log is not None:
            log(
                f"epoch {stats.epoch} mae {stats.holdout_mae:.4f} "
                f"domain_acc {stats.holdout_domain_accuracy:.4f}"
            )
    return history


def score_face(net: QualityNet, features: np.ndarray) -> float:
    return net.score(features)


def filter_tracklet(scores: Sequence[float]) -> bool:
    """Keep a manipulated tracklet only if its mean score exceeds the gate.

    Strictly greater than 0.6: a mean of exactly 0.6 is discarded.
    """
    scores = list(scores)
    if not scores:
        raise InputError("filter_tracklet needs at least one score")
    return float(np.mean(scores)) > QUALITY_GATE
