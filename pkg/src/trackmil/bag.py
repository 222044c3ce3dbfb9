"""Bag-level aggregation, classification, loss and localization.

A video's tracklets form an unordered bag. Each tracklet descriptor ``Y_k``
gets a raw attention logit ``e_k = w^T tanh(W^T Y_k)``; the softmax of the
logits weights the bag feature ``O = sum_k a_k Y_k``, and a linear head turns
``O`` into the video fake-probability. The same logits, squashed through a
sigmoid, double as per-tracklet fakeness gate scores ``g_k`` used for
localization and for the sparsity penalty.

The sparsity term penalizes ``||sigmoid(e)||_1`` rather than ``||a||_1``: the
softmax-normalized attention always sums to exactly 1, so its l1 norm carries
no gradient. The literal form is kept behind ``sparsity_target="attention"``
for comparison runs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, InputError

BAG_VARIANTS = ("attention", "max_pooling", "avg_pooling")
SPARSITY_TARGETS = ("gate_scores", "attention")
DEFAULT_LOCALIZATION_THRESHOLD = 0.75


def attention_weights(
    descriptors: Sequence[Tensor], weight: Tensor, vector: Tensor
) -> tuple[Tensor, Tensor]:
    """Normalized attention over a bag of ``D x 1`` descriptors.

    ``weight`` is ``D x C``, ``vector`` is ``C x 1``. Returns ``(a, e)`` where
    ``e`` is the ``K x 1`` column of raw logits and ``a`` its softmax.
    """
    if not descriptors:
        raise InputError("attention_weights: empty bag")
    wt = ad.transpose(weight)
    vt = ad.transpose(vector)
    logits = [ad.matmul(vt, ad.tanh(ad.matmul(wt, y))) for y in descriptors]
    e = logits[0] if len(logits) == 1 else ad.concat_rows(logits)
    return ad.softmax_columns(e), e


def bag_aggregate(descriptors: Sequence[Tensor], attention: Tensor) -> Tensor:
    """Attention-weighted sum of descriptors: ``O = sum_k a_k Y_k``."""
    if attention.shape != (len(descriptors), 1):
        raise DimensionError(
            f"attention {attention.shape} does not match bag of {len(descriptors)} descriptors"
        )
    total = attention.data.sum()
    if abs(total - 1.0) > 1e-6:
        raise InputError(f"attention weights must sum to 1, got {total!r}")
    stacked = descriptors[0] if len(descriptors) == 1 else ad.concat_cols(descriptors)
    return ad.matmul(stacked, attention)


def bag_aggregate_variant(
    descriptors: Sequence[Tensor], variant: str, attention: Tensor | None = None
) -> Tensor:
    """Bag feature under the selected pooling scheme."""
    if variant == "attention":
        if attention is None:
            raise ConfigurationError("attention pooling needs attention weights")
        return bag_aggregate(descriptors, attention)
    if not descriptors:
        raise InputError("bag_aggregate_variant: empty bag")
    stacked = descriptors[0] if len(descriptors) == 1 else ad.concat_cols(descriptors)
    if variant == "max_pooling":
        return ad.maxpool_time(stacked)
    if variant == "avg_pooling":
        return ad.meanpool_time(stacked)
    raise ConfigurationError(
        f"unknown bag aggregation variant {variant!r}; expected one of {BAG_VARIANTS}"
    )


def classify(bag_feature: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Video logit from the bag feature: ``w^T O + b`` (``1 x 1``)."""
    if weight.shape != (bag_feature.rows, 1):
        raise DimensionError(
            f"classifier weight {weight.shape} does not match bag feature {bag_feature.shape}"
        )
    if bias.shape != (1, 1):
        raise DimensionError(f"classifier bias must be 1x1, got {bias.shape}")
    return ad.add(ad.matmul(ad.transpose(weight), bag_feature), bias)


def bag_loss(
    video_logit: Tensor,
    attention_logits: Tensor,
    label: int,
    beta: float = 0.001,
    sparsity_target: str = "gate_scores",
) -> Tensor:
    """Training objective: BCE on the video logit plus a sparsity penalty.

    ``beta = 0`` reduces to plain BCE.
    """
    if beta < 0:
        raise ConfigurationError(f"sparsity coefficient must be >= 0, got {beta}")
    if sparsity_target not in SPARSITY_TARGETS:
        raise ConfigurationError(
            f"sparsity_target must be one of {SPARSITY_TARGETS}, got {sparsity_target!r}"
        )
    loss = ad.binary_cross_entropy(video_logit, label)
    if beta > 0:
        if sparsity_target == "gate_scores":
            penalty = ad.l1_norm(ad.sigmoid(attention_logits))
        else:
            penalty = ad.l1_norm(ad.softmax_columns(attention_logits))
        loss = ad.add(loss, ad.scale(penalty, beta))
    return loss


def localize(
    gate_scores: np.ndarray, threshold: float = DEFAULT_LOCALIZATION_THRESHOLD
) -> list[int]:
    """Indices of tracklets whose gate score strictly exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"localization threshold must be in (0, 1), got {threshold}")
    scores = np.asarray(gate_scores, dtype=np.float64).reshape(-1)
    return [int(k) for k in np.nonzero(scores > threshold)[0]]
