"""Tracklet feature files, dataset manifests, and synthetic bag generation.

Feature file format (binary, little-endian, bit-exact):
    magic ``TRKF`` | u32 version=1 | u32 D | u32 T | T frames x D float32

Frames are stored frame-major (all D values of frame 0, then frame 1, ...);
in memory a tracklet is the transposed ``D x T`` float64 matrix whose columns
are per-frame feature vectors.

Manifest format (UTF-8 JSON):
    {"split": ..., "videos": [{"id", "label", "tracklets":
        [{"id", "path", "frames", "label"?}]}]}

``label`` is ``"real"`` or ``"fake"``; the tracklet-level label is optional
and only ever consumed by evaluation code, never by training.

The synthetic generator plants a weak temporal signal: every tracklet of a
video shares a Gaussian prototype plus iid frame noise, and fake tracklets
additionally carry a zero-mean sinusoidal oscillation along one dataset-global
unit direction, with a random per-tracklet phase. Averaged over full periods
the oscillation cancels, so per-frame statistics look clean while temporal
aggregation can expose it.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

FEATURE_MAGIC = b"TRKF"
FEATURE_VERSION = 1

REAL, FAKE = 0, 1
_LABEL_NAMES = {"real": REAL, "fake": FAKE}


def label_to_int(name: str) -> int:
    if name not in _LABEL_NAMES:
        raise DataError(f"label must be 'real' or 'fake', got {name!r}")
    return _LABEL_NAMES[name]


# ---------------------------------------------------------------------------
# feature files


def save_tracklet_features(path: str | Path, features: np.ndarray) -> None:
    """Write a ``D x T`` matrix to the binary tracklet format."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"tracklet features must be a D x T matrix, got shape {arr.shape}")
    d, t = arr.shape
    payload = arr.T.astype("<f4").tobytes()
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, d, t)
    Path(path).write_bytes(header + payload)


def load_tracklet_features(path: str | Path) -> np.ndarray:
    """Read a tracklet feature file back into a ``D x T`` float64 matrix."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tracklet features {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path} is not a tracklet feature file (bad magic)")
    version, d, t = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    expected = 16 + 4 * d * t
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {d}x{t} features, got {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=16).reshape(t, d)
    return frames.T.astype(np.float64)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class TrackletRecord:
    tracklet_id: str
    path: str
    frames: int
    label: str | None = None


@dataclass
class VideoRecord:
    video_id: str
    label: str
    tracklets: list[TrackletRecord]


@dataclass
class DatasetManifest:
    split: str
    videos: list[VideoRecord]

    def validate(self) -> None:
        seen = set()
        for video in self.videos:
            if video.video_id in seen:
                raise DataError(f"duplicate video id {video.video_id!r} in manifest")
            seen.add(video.video_id)
            label_to_int(video.label)
            if not video.tracklets:
                raise DataError(f"video {video.video_id!r} has no tracklets")
            labeled = [t for t in video.tracklets if t.label is not None]
            for t in labeled:
                label_to_int(t.label)
            fakes = sum(1 for t in labeled if t.label == "fake")
            if video.label == "real" and fakes > 0:
                raise DataError(f"real video {video.video_id!r} contains fake tracklets")
            if video.label == "fake" and labeled and fakes == 0:
                raise DataError(
                    f"fake video {video.video_id!r} has tracklet labels but no fake tracklet"
                )

    def to_dict(self) -> dict:
        videos = []
        for video in self.videos:
            tracklets = []
            for t in video.tracklets:
                entry = {"id": t.tracklet_id, "path": t.path, "frames": t.frames}
                if t.label is not None:
                    entry["label"] = t.label
                tracklets.append(entry)
            videos.append({"id": video.video_id, "label": video.label, "tracklets": tracklets})
        return {"split": self.split, "videos": videos}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            videos = [
                VideoRecord(
                    video_id=v["id"],
                    label=v["label"],
                    tracklets=[
                        TrackletRecord(
                            tracklet_id=t["id"],
                            path=t["path"],
                            frames=int(t["frames"]),
                            label=t.get("label"),
                        )
                        for t in v["tracklets"]
                    ],
                )
                for v in d["videos"]
            ]
            manifest = cls(split=d["split"], videos=videos)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        manifest.validate()
        return manifest


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    manifest.validate()
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    return DatasetManifest.from_dict(d)


# ---------------------------------------------------------------------------
# in-memory bags


@dataclass
class Tracklet:
    """One face track: a ``D x T`` feature matrix plus an optional eval label."""

    tracklet_id: str
    features: np.ndarray
    label: int | None = None

    @property
    def frames(self) -> int:
        return self.features.shape[1]


@dataclass
class Bag:
    """One video: its tracklets and the video-level label (real=0, fake=1)."""

    video_id: str
    tracklets: list[Tracklet]
    label: int

    def feature_list(self) -> list[np.ndarray]:
        return [t.features for t in self.tracklets]


def load_bags(manifest: DatasetManifest, base_dir: str | Path) -> list[Bag]:
    """Materialize every bag of a manifest; paths resolve against ``base_dir``."""
    base = Path(base_dir)
    bags = []
    feature_dim = None
    for video in manifest.videos:
        tracklets = []
        for rec in video.tracklets:
            features = load_tracklet_features(base / rec.path)
            if features.shape[1] != rec.frames:
                raise DataError(
                    f"tracklet {rec.tracklet_id!r}: manifest says {rec.frames} frames, "
                    f"file has {features.shape[1]}"
                )
            if feature_dim is None:
                feature_dim = features.shape[0]
            elif features.shape[0] != feature_dim:
                raise DataError(
                    f"tracklet {rec.tracklet_id!r} has feature dim {features.shape[0]}, "
                    f"dataset uses {feature_dim}"
                )
            label = None if rec.label is None else label_to_int(rec.label)
            tracklets.append(Tracklet(rec.tracklet_id, features, label))
        bags.append(Bag(video.video_id, tracklets, label_to_int(video.label)))
    return bags


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the planted-signal generator."""

    videos: int = 0
    feature_dim: int = 64
    frames: int = 32
    k_min: int = 1
    k_max: int = 8
    fake_video_ratio: float = 0.5
    fake_tracklet_ratio: float | None = None  # None: exactly one fake tracklet
    amplitude: float = 0.5
    frequency: float = math.pi / 4
    noise: float = 0.1
    prototype_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.videos < 1:
            raise ConfigurationError(f"videos must be >= 1, got {self.videos}")
        if self.feature_dim < 1 or self.frames < 1:
            raise ConfigurationError("feature_dim and frames must be positive")
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigurationError(f"need 1 <= k_min <= k_max, got {self.k_min}..{self.k_max}")
        if not 0.0 < self.fake_video_ratio <= 1.0:
            raise ConfigurationError(
                f"fake_video_ratio must be in (0, 1], got {self.fake_video_ratio}"
            )
        if self.fake_tracklet_ratio is not None and not 0.0 < self.fake_tracklet_ratio <= 1.0:
            raise ConfigurationError(
                f"fake_tracklet_ratio must be in (0, 1], got {self.fake_tracklet_ratio}"
            )
        if self.amplitude <= 0 or self.frequency <= 0 or self.noise <= 0:
            raise ConfigurationError("amplitude, frequency and noise must be positive")
        if self.prototype_scale <= 0:
            raise ConfigurationError(f"prototype_scale must be positive, got {self.prototype_scale}")


def anomaly_direction(cfg: SyntheticConfig) -> np.ndarray:
    """The dataset-global unit vector carrying the planted oscillation."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    v = rng.normal(size=(cfg.feature_dim, 1))
    return v / np.linalg.norm(v)


def _video_rng(cfg: SyntheticConfig, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, index)))


def _fake_count(cfg: SyntheticConfig, k: int) -> int:
    if cfg.fake_tracklet_ratio is None:
        return 1
    return max(1, round(cfg.fake_tracklet_ratio * k))


def generate_synthetic_dataset(
    cfg: SyntheticConfig,
    out_dir: str | Path,
    split: str = "train",
    start_index: int = 0,
) -> DatasetManifest:
    """Generate ``cfg.videos`` videos, write features, return the manifest.

    Video streams are keyed by ``cfg.seed`` and the absolute video index, so
    disjoint index ranges produce disjoint, reproducible splits that share the
    same anomaly direction. The manifest is written to ``<out_dir>/<split>.json``
    and features under ``<out_dir>/features/``.
    """
    out = Path(out_dir)
    feature_dir = out / "features"
    try:
        feature_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {feature_dir}: {exc}") from exc

    direction = anomaly_direction(cfg)
    time_grid = np.arange(cfg.frames, dtype=np.float64)
    videos = []
    for i in range(cfg.videos):
        index = start_index + i
        rng = _video_rng(cfg, index)
        video_id = f"v{index:06d}"
        is_fake = bool(rng.random() < cfg.fake_video_ratio)
        k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
        prototype = rng.normal(scale=cfg.prototype_scale, size=(cfg.feature_dim, 1))
        fake_slots: set[int] = set()
        if is_fake:
            n_fake = min(_fake_count(cfg, k), k)
            fake_slots = set(rng.choice(k, size=n_fake, replace=False).tolist())
        records = []
        for slot in range(k):
            noise = rng.normal(scale=cfg.noise, size=(cfg.feature_dim, cfg.frames))
            features = prototype + noise
            tracklet_fake = slot in fake_slots
            if tracklet_fake:
                phase = rng.uniform(0.0, 2.0 * math.pi)
                wave = cfg.amplitude * np.sin(cfg.frequency * time_grid + phase)
                features = features + direction * wave[None, :]
            tracklet_id = f"{video_id}_t{slot:02d}"
            rel_path = f"features/{tracklet_id}.trkf"
            save_tracklet_features(out / rel_path, features)
            records.append(
                TrackletRecord(
                    tracklet_id=tracklet_id,
                    path=rel_path,
                    frames=cfg.frames,
                    label="fake" if tracklet_fake else "real",
                )
            )
        videos.append(VideoRecord(video_id, "fake" if is_fake else "real", records))

    manifest = DatasetManifest(split=split, videos=videos)
    save_manifest(out / f"{split}.json", manifest)
    return manifest
