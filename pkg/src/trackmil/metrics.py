"""Ranking metrics and the tracklet-level evaluation protocol.

AUC uses the rank-sum (Mann-Whitney) formulation with midranks for ties:
``(#correctly ordered pairs + 0.5 * #tied pairs) / (P * N)``. Average
precision is definitional over a descending stable sort, so ties resolve by
the caller's input order; :func:`evaluate` feeds tracklets sorted by id,
making the ranking deterministic across runs and platforms.

The model never sees a label here: :func:`evaluate` passes feature matrices
only, and reads tracklet labels solely to score the predictions afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bag import DEFAULT_LOCALIZATION_THRESHOLD, localize
from .data import Bag
from .errors import InputError, UndefinedMetricError

DEFAULT_THRESHOLD_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))  # 0.5 .. 0.95


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    l = np.asarray(labels).reshape(-1)
    if s.shape != l.shape:
        raise InputError(f"{s.size} scores but {l.size} labels")
    if s.size == 0:
        raise InputError("empty score list")
    if not np.all(np.isin(l, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return s, l.astype(np.int64)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties half)."""
    s, l = _scores_labels(scores, labels)
    pos = int(l.sum())
    neg = l.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC needs both a positive and a negative example")
    ranks = _midranks(s)
    rank_sum = ranks[l == 1].sum()
    return float((rank_sum - pos * (pos + 1) / 2.0) / (pos * neg))


def average_precision(scores, labels) -> float:
    """Pooled single-class AP; ties keep the caller's (stable) input order."""
    s, l = _scores_labels(scores, labels)
    pos = int(l.sum())
    if pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive example")
    order = np.argsort(-s, kind="stable")
    rel = l[order]
    hits = np.cumsum(rel)
    precision_at = hits / np.arange(1, l.size + 1)
    return float((precision_at * rel).sum() / pos)


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    """Fraction of correct hard decisions; prob > threshold reads as fake."""
    p, l = _scores_labels(probs, labels)
    preds = (p > threshold).astype(np.int64)
    return float((preds == l).mean())


def search_localization_threshold(
    scores, labels, grid: Sequence[float] = DEFAULT_THRESHOLD_GRID
) -> float:
    """Grid-search the localization threshold by F1 of the strict > rule.

    Ties prefer the lowest qualifying threshold, keeping the search
    deterministic.
    """
    s, l = _scores_labels(scores, labels)
    if not grid:
        raise InputError("empty threshold grid")
    best_t, best_f1 = None, -1.0
    for t in grid:
        preds = s > t
        tp = int(np.sum(preds & (l == 1)))
        fp = int(np.sum(preds & (l == 0)))
        fn = int(np.sum(~preds & (l == 1)))
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


@dataclass
class MetricsReport:
    """Video-level classification plus tracklet-level localization metrics."""

    video_auc: float
    video_acc: float
    localization_map: float | None
    threshold: float
    num_videos: int
    num_tracklets: int
    num_fake_videos: int
    num_fake_tracklets: int | None

    def to_dict(self) -> dict:
        return {
            "video_auc": self.video_auc,
            "video_acc": self.video_acc,
            "localization_map": self.localization_map,
            "threshold": self.threshold,
            "num_videos": self.num_videos,
            "num_tracklets": self.num_tracklets,
            "num_fake_videos": self.num_fake_videos,
            "num_fake_tracklets": self.num_fake_tracklets,
        }


def evaluate(
    model,
    bags: Sequence[Bag],
    threshold: float = DEFAULT_LOCALIZATION_THRESHOLD,
) -> tuple[MetricsReport, dict[str, list[str]]]:
    """Score every bag and compute the report plus per-video localizations.

    The model receives feature matrices only. Tracklet-level mAP is computed
    over all tracklets pooled across the split (sorted by tracklet id) and is
    ``None`` when the manifest carries no tracklet labels.
    """
    if not bags:
        raise InputError("evaluate needs at least one bag")
    video_probs, video_labels = [], []
    pooled: list[tuple[str, float, int | None]] = []
    decisions: dict[str, list[str]] = {}
    for bag in bags:
        output = model.predict(bag.feature_list())
        video_probs.append(output.probability)
        video_labels.append(bag.label)
        flagged = localize(output.gate_scores, threshold)
        decisions[bag.video_id] = [bag.tracklets[k].tracklet_id for k in flagged]
        for tracklet, score in zip(bag.tracklets, output.gate_scores):
            pooled.append((tracklet.tracklet_id, float(score), tracklet.label))

    pooled.sort(key=lambda item: item[0])
    labeled = [(s, l) for _, s, l in pooled if l is not None]
    loc_map: float | None = None
    num_fake_tracklets: int | None = None
    if labeled:
        tscores = [s for s, _ in labeled]
        tlabels = [l for _, l in labeled]
        loc_map = average_precision(tscores, tlabels)
        num_fake_tracklets = int(sum(tlabels))

    report = MetricsReport(
        video_auc=auc(video_probs, video_labels),
        video_acc=accuracy(video_probs, video_labels),
        localization_map=loc_map,
        threshold=threshold,
        num_videos=len(bags),
        num_tracklets=len(pooled),
        num_fake_videos=int(sum(video_labels)),
        num_fake_tracklets=num_fake_tracklets,
    )
    return report, decisions
