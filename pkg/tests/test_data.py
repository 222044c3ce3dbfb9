import json
import math
from pathlib import Path

import numpy as np
import pytest

from trackmil.data import (
    DatasetManifest,
    SyntheticConfig,
    TrackletRecord,
    VideoRecord,
    anomaly_direction,
    generate_synthetic_dataset,
    label_to_int,
    load_bags,
    load_manifest,
    load_tracklet_features,
    save_manifest,
    save_tracklet_features,
)
from trackmil.errors import ConfigurationError, DataError

TINY = dict(videos=12, feature_dim=8, frames=16, k_min=1, k_max=4, seed=3)


# ---------------------------------------------------------------------------
# feature files


def test_feature_file_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 9)).astype(np.float32).astype(np.float64)
    path = tmp_path / "a.trkf"
    save_tracklet_features(path, x)
    loaded = load_tracklet_features(path)
    assert loaded.dtype == np.float64
    assert np.array_equal(loaded, x)
    # re-saving the loaded matrix reproduces the file byte for byte
    save_tracklet_features(tmp_path / "b.trkf", loaded)
    assert (tmp_path / "a.trkf").read_bytes() == (tmp_path / "b.trkf").read_bytes()


def test_feature_file_layout_is_frame_major(tmp_path):
    x = np.array([[1.0, 2.0], [3.0, 4.0]])  # D=2, T=2
    path = tmp_path / "c.trkf"
    save_tracklet_features(path, x)
    raw = path.read_bytes()
    assert raw[:4] == b"TRKF"
    version, d, t = np.frombuffer(raw[4:16], dtype="<u4")
    assert (version, d, t) == (1, 2, 2)
    values = np.frombuffer(raw[16:], dtype="<f4")
    # frame 0 carries column 0 of the matrix
    assert values.tolist() == [1.0, 3.0, 2.0, 4.0]


def test_feature_file_errors_name_the_path(tmp_path):
    missing = tmp_path / "missing.trkf"
    with pytest.raises(DataError, match="missing.trkf"):
        load_tracklet_features(missing)
    bad = tmp_path / "bad.trkf"
    bad.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DataError, match="bad.trkf"):
        load_tracklet_features(bad)
    truncated = tmp_path / "short.trkf"
    save_tracklet_features(truncated, np.ones((3, 3)))
    truncated.write_bytes(truncated.read_bytes()[:-5])
    with pytest.raises(DataError, match="short.trkf"):
        load_tracklet_features(truncated)
    wrong_version = tmp_path / "v9.trkf"
    save_tracklet_features(wrong_version, np.ones((1, 1)))
    raw = bytearray(wrong_version.read_bytes())
    raw[4] = 9
    wrong_version.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        load_tracklet_features(wrong_version)


# ---------------------------------------------------------------------------
# manifests


def _manifest():
    return DatasetManifest(
        split="train",
        videos=[
            VideoRecord("v0", "real", [TrackletRecord("v0_t0", "f/v0_t0.trkf", 4, "real")]),
            VideoRecord(
                "v1",
                "fake",
                [
                    TrackletRecord("v1_t0", "f/v1_t0.trkf", 4, "real"),
                    TrackletRecord("v1_t1", "f/v1_t1.trkf", 4, "fake"),
                ],
            ),
        ],
    )


def test_manifest_roundtrip(tmp_path):
    manifest = _manifest()
    path = tmp_path / "train.json"
    save_manifest(path, manifest)
    loaded = load_manifest(path)
    assert loaded.split == "train"
    assert [v.video_id for v in loaded.videos] == ["v0", "v1"]
    assert loaded.videos[1].tracklets[1].label == "fake"
    # optional labels may be omitted
    raw = json.loads(path.read_text())
    del raw["videos"][0]["tracklets"][0]["label"]
    path.write_text(json.dumps(raw))
    assert load_manifest(path).videos[0].tracklets[0].label is None


def test_manifest_invariants():
    dup = _manifest()
    dup.videos[1] = VideoRecord("v0", "fake", dup.videos[1].tracklets)
    with pytest.raises(DataError, match="duplicate"):
        dup.validate()

    real_with_fake = _manifest()
    real_with_fake.videos[0].tracklets[0].label = "fake"
    with pytest.raises(DataError, match="real video"):
        real_with_fake.validate()

    fake_without_fake = _manifest()
    fake_without_fake.videos[1].tracklets[1].label = "real"
    with pytest.raises(DataError, match="no fake tracklet"):
        fake_without_fake.validate()

    with pytest.raises(DataError):
        label_to_int("synthetic")


def test_load_bags_checks_consistency(tmp_path):
    manifest = _manifest()
    (tmp_path / "f").mkdir()
    for video in manifest.videos:
        for t in video.tracklets:
            save_tracklet_features(tmp_path / t.path, np.zeros((6, 4)))
    bags = load_bags(manifest, tmp_path)
    assert [b.label for b in bags] == [0, 1]
    assert bags[1].tracklets[1].label == 1
    assert bags[0].feature_list()[0].shape == (6, 4)

    manifest.videos[0].tracklets[0].frames = 99
    with pytest.raises(DataError, match="99"):
        load_bags(manifest, tmp_path)
    manifest.videos[0].tracklets[0].frames = 4
    save_tracklet_features(tmp_path / "f/v1_t1.trkf", np.zeros((7, 4)))
    with pytest.raises(DataError, match="feature dim"):
        load_bags(manifest, tmp_path)


# ---------------------------------------------------------------------------
# synthetic generation


def test_synthetic_config_validation():
    with pytest.raises(ConfigurationError):
        SyntheticConfig(videos=0)
    with pytest.raises(ConfigurationError):
        SyntheticConfig(videos=1, k_min=3, k_max=2)
    with pytest.raises(ConfigurationError):
        SyntheticConfig(videos=1, fake_video_ratio=0.0)
    with pytest.raises(ConfigurationError):
        SyntheticConfig(videos=1, fake_tracklet_ratio=1.5)


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_deterministic_and_seed_sensitive(tmp_path):
    cfg = SyntheticConfig(**TINY)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    generate_synthetic_dataset(cfg, a)
    generate_synthetic_dataset(cfg, b)
    assert _tree_bytes(a) == _tree_bytes(b)
    generate_synthetic_dataset(SyntheticConfig(**{**TINY, "seed": 4}), c)
    assert _tree_bytes(a) != _tree_bytes(c)


def test_generated_manifest_satisfies_invariants(tmp_path):
    cfg = SyntheticConfig(**TINY)
    manifest = generate_synthetic_dataset(cfg, tmp_path)
    manifest.validate()
    reloaded = load_manifest(tmp_path / "train.json")
    assert len(reloaded.videos) == cfg.videos
    for video in reloaded.videos:
        assert cfg.k_min <= len(video.tracklets) <= cfg.k_max
        fakes = sum(1 for t in video.tracklets if t.label == "fake")
        if video.label == "fake":
            assert fakes == 1  # default: exactly one planted tracklet
        else:
            assert fakes == 0
        for t in video.tracklets:
            assert t.frames == cfg.frames


def test_fake_tracklet_ratio_controls_count(tmp_path):
    cfg = SyntheticConfig(**{**TINY, "fake_tracklet_ratio": 0.5, "k_min": 4, "k_max": 4})
    manifest = generate_synthetic_dataset(cfg, tmp_path)
    for video in manifest.videos:
        fakes = sum(1 for t in video.tracklets if t.label == "fake")
        assert fakes == (2 if video.label == "fake" else 0)


def test_oscillation_is_zero_mean_over_full_periods():
    # frequency pi/4 has period 8; 32 frames = 4 full periods, so the planted
    # wave sums to ~0 and per-frame means cannot reveal it
    cfg = SyntheticConfig(videos=1, seed=0)
    t = np.arange(cfg.frames)
    for phase in np.linspace(0.0, 2.0 * math.pi, 9):
        wave = cfg.amplitude * np.sin(cfg.frequency * t + phase)
        assert abs(wave.sum()) / cfg.frames <= 0.05 * cfg.amplitude


def test_fake_tracklets_carry_the_planted_direction(tmp_path):
    cfg = SyntheticConfig(videos=30, feature_dim=16, frames=32, k_min=2, k_max=4, seed=9)
    manifest = generate_synthetic_dataset(cfg, tmp_path)
    bags = load_bags(manifest, tmp_path)
    direction = anomaly_direction(cfg)[:, 0]
    fake_energy, real_energy = [], []
    for bag in bags:
        for tr in bag.tracklets:
            projected = direction @ tr.features  # length-T series along u
            energy = np.var(projected)
            (fake_energy if tr.label == 1 else real_energy).append(energy)
    assert fake_energy, "expected at least one fake tracklet"
    # oscillation variance m^2/2 = 0.125 dominates noise variance 0.01
    assert min(fake_energy) > max(real_energy)


def test_splits_share_direction_and_disjoint_ids(tmp_path):
    cfg_a = SyntheticConfig(**TINY)
    cfg_b = SyntheticConfig(**{**TINY, "videos": 6})
    m_train = generate_synthetic_dataset(cfg_a, tmp_path, split="train", start_index=0)
    m_val = generate_synthetic_dataset(cfg_b, tmp_path, split="val", start_index=cfg_a.videos)
    train_ids = {v.video_id for v in m_train.videos}
    val_ids = {v.video_id for v in m_val.videos}
    assert not train_ids & val_ids
    assert np.array_equal(anomaly_direction(cfg_a), anomaly_direction(cfg_b))
