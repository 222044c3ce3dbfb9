"""Command-line entry points: gen-data, train, eval, predict, qnet-train.

Every subcommand accepts ``--config FILE`` (UTF-8 JSON whose keys are the
flag names with underscores); explicit flags override file values. On failure
the process prints one line of the form ``error:<category>: <message>`` to
stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SyntheticConfig,
    generate_synthetic_dataset,
    load_bags,
    load_manifest,
    load_tracklet_features,
    save_tracklet_features,
)
from .errors import DataError, TrackMILError
from .metrics import evaluate
from .model import ForgeryDetector, ModelConfig
from .quality import (
    QualityCorpusConfig,
    QualityNet,
    QualityNetConfig,
    generate_quality_corpus,
    train_quality_net,
)
from .training import TrainConfig, train_model


def _split_sizes(total: int) -> tuple[int, int, int]:
    train = total * 5 // 7
    val = (total - train) // 2
    return train, val, total - train - val


def cmd_gen_data(args) -> int:
    base = dict(
        feature_dim=args.feature_dim,
        frames=args.frames,
        k_min=args.k_min,
        k_max=args.k_max,
        fake_video_ratio=args.fake_ratio,
        fake_tracklet_ratio=args.fake_tracklet_ratio,
        amplitude=args.amplitude,
        frequency=args.frequency,
        noise=args.noise,
        prototype_scale=args.prototype_scale,
        seed=args.seed,
    )
    n_train, n_val, n_test = _split_sizes(args.videos)
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{args.videos} videos are too few for a train/val/test split")
    start = 0
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        cfg = SyntheticConfig(videos=count, **base)
        manifest = generate_synthetic_dataset(cfg, args.out, split=split, start_index=start)
        start += count
        fakes = sum(1 for v in manifest.videos if v.label == "fake")
        print(f"{split}: {count} videos ({fakes} fake) -> {Path(args.out) / (split + '.json')}")
    return 0


def _load_split_bags(data_dir: str, split: str):
    manifest_path = Path(data_dir) / f"{split}.json"
    if not manifest_path.exists():
        raise DataError(f"no {split} manifest at {manifest_path}")
    manifest = load_manifest(manifest_path)
    return load_bags(manifest, data_dir)


def _check_feature_dim(bags, feature_dim: int) -> None:
    got = bags[0].tracklets[0].features.shape[0]
    if got != feature_dim:
        raise DataError(
            f"checkpoint expects feature dim {feature_dim}, dataset has {got}"
        )


def cmd_train(args) -> int:
    train_bags = _load_split_bags(args.data, "train")
    val_bags = _load_split_bags(args.data, "val")
    cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        beta=args.beta,
        epochs=args.epochs,
        seed=args.seed,
        instance_variant=args.variant,
        bag_variant=args.bag_variant,
        sparsity_target=args.sparsity_target,
        feature_dim=train_bags[0].tracklets[0].features.shape[0],
        attention_dim=args.attention_dim,
        num_layers=args.num_layers,
        rates=tuple(int(r) for r in args.rates.split(",")),
        kernel_size=args.kernel_size,
        bottleneck_divisor=args.bottleneck_divisor,
        norm_mode=args.norm_mode,
        localization_threshold=args.threshold,
        feature_jitter=args.jitter,
    )
    _, result = train_model(train_bags, val_bags, cfg, log=print)
    save_checkpoint(
        args.out,
        {
            "kind": "forgery_detector",
            "model": cfg.model_config().to_dict(),
            "train": cfg.to_dict(),
            "best_epoch": result.best_epoch,
            "best_val_auc": result.best_val_auc,
        },
        result.best_params,
    )
    print(
        f"saved best checkpoint (epoch {result.best_epoch}, "
        f"val_auc {result.best_val_auc:.4f}) -> {args.out}"
    )
    return 0


def _load_detector(path: str) -> tuple[ForgeryDetector, dict]:
    config, params = load_checkpoint(path)
    if config.get("kind") != "forgery_detector" or "model" not in config:
        raise DataError(f"{path} is not a forgery detector checkpoint")
    model = ForgeryDetector.from_arrays(ModelConfig.from_dict(config["model"]), params)
    return model, config


def cmd_eval(args) -> int:
    model, config = _load_detector(args.ckpt)
    bags = _load_split_bags(args.data, args.split)
    _check_feature_dim(bags, model.config.feature_dim)
    report, decisions = evaluate(model, bags, args.threshold)
    payload = report.to_dict()
    payload["split"] = args.split
    payload["checkpoint_best_epoch"] = config.get("best_epoch")
    payload["decisions"] = decisions
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"report -> {args.out}")
    else:
        print(text)
    map_text = "n/a" if report.localization_map is None else f"{report.localization_map:.4f}"
    print(
        f"{args.split}: auc {report.video_auc:.4f} acc {report.video_acc:.4f} "
        f"map {map_text} (threshold {report.threshold})"
    )
    return 0


def cmd_predict(args) -> int:
    model, _ = _load_detector(args.ckpt)
    directory = Path(args.dir)
    files = sorted(directory.glob("*.trkf"))
    if not files:
        raise DataError(f"no .trkf tracklet files in {directory}")
    ids = [f.stem for f in files]
    features = [load_tracklet_features(f) for f in files]
    for x, f in zip(features, files):
        if x.shape[0] != model.config.feature_dim:
            raise DataError(
                f"{f}: feature dim {x.shape[0]} does not match checkpoint "
                f"({model.config.feature_dim})"
            )
    output = model.predict(features)
    for tracklet_id, score in zip(ids, output.gate_scores):
        print(f"{tracklet_id} {score:.6f}")
    print(f"video {output.probability:.6f}")
    return 0


def cmd_qnet_train(args) -> int:
    corpus_cfg = QualityCorpusConfig(
        samples=args.samples,
        feature_dim=args.feature_dim,
        num_domains=args.domains,
        max_iterations=args.max_iterations,
        pattern_scale=args.pattern_scale,
    )
    corpus = generate_quality_corpus(corpus_cfg, seed=args.seed)
    if args.dump_corpus:
        dump = Path(args.dump_corpus)
        dump.mkdir(parents=True, exist_ok=True)
        index = []
        for i, sample in enumerate(corpus):
            rel = f"q{i:06d}.trkf"
            save_tracklet_features(dump / rel, sample.features)
            index.append({"id": f"q{i:06d}", "path": rel,
                          "score": sample.score, "domain": sample.domain})
        (dump / "corpus.json").write_text(
            json.dumps({"samples": index}, indent=2) + "\n", encoding="utf-8"
        )
        print(f"corpus ({len(corpus)} samples) -> {dump}")
    net_cfg = QualityNetConfig(
        feature_dim=args.feature_dim,
        hidden_dim=args.hidden,
        num_domains=args.domains,
        alpha=args.alpha,
    )
    net = QualityNet.create(net_cfg, seed=args.seed)
    history = train_quality_net(
        corpus,
        net,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        log=print,
    )
    final = history[-1]
    save_checkpoint(
        args.out,
        {
            "kind": "quality_net",
            "qnet": net_cfg.to_dict(),
            "corpus": {
                "samples": corpus_cfg.samples,
                "feature_dim": corpus_cfg.feature_dim,
                "num_domains": corpus_cfg.num_domains,
                "max_iterations": corpus_cfg.max_iterations,
                "pattern_scale": corpus_cfg.pattern_scale,
                "seed": args.seed,
            },
            "final_mae": final.holdout_mae,
            "final_domain_accuracy": final.holdout_domain_accuracy,
        },
        net.parameter_arrays(),
    )
    print(
        f"saved quality net (mae {final.holdout_mae:.4f}, "
        f"domain_acc {final.holdout_domain_accuracy:.4f}) -> {args.out}"
    )
    return 0


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="trackmil",
        description="Weakly-supervised multi-person video forgery detection",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None,
                       help="JSON file of flag defaults (flags override)")
        subparsers[name] = p
        return p

    p = sub("gen-data", cmd_gen_data, "generate a synthetic dataset with planted anomalies")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--videos", type=int, default=2800,
                   help="total videos; split 5:1:1 into train/val/test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--fake-ratio", type=float, default=0.5)
    p.add_argument("--fake-tracklet-ratio", type=float, default=None,
                   help="fraction of fake tracklets per fake video (default: exactly one)")
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--frequency", type=float, default=math.pi / 4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--prototype-scale", type=float, default=0.25)

    p = sub("train", cmd_train, "train a detector on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory (train.json + val.json)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--beta", type=float, default=0.001,
                   help="sparsity coefficient; 0 disables the penalty")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="full",
                   choices=["full", "max_pool_only", "avg_pool_only",
                            "no_short_term", "no_long_term"],
                   help="instance aggregation variant")
    p.add_argument("--bag-variant", default="attention",
                   choices=["attention", "max_pooling", "avg_pooling"])
    p.add_argument("--sparsity-target", default="gate_scores",
                   choices=["gate_scores", "attention"])
    p.add_argument("--attention-dim", type=int, default=128)
    p.add_argument("--num-layers", type=int, default=3)
    p.add_argument("--rates", default="1,2,4", help="comma-separated dilation rates")
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--bottleneck-divisor", type=int, default=4)
    p.add_argument("--norm-mode", default="temporal", choices=["frame", "temporal"])
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--jitter", type=float, default=0.0,
                   help="train-time Gaussian feature jitter (default off)")

    p = sub("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--out", default=None, help="write the JSON report here (default: stdout)")

    p = sub("predict", cmd_predict, "score one directory of tracklet feature files as a video")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dir", required=True, help="directory of .trkf files forming one video")

    p = sub("qnet-train", cmd_qnet_train, "train the domain-adversarial quality scorer")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--alpha", type=float, default=0.1,
                   help="adversarial coefficient; 0 disables gradient reversal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=6000)
    p.add_argument("--feature-dim", type=int, default=256)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--max-iterations", type=int, default=5000)
    p.add_argument("--pattern-scale", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dump-corpus", default=None,
                   help="also write the generated corpus to this directory")

    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            path = Path(args.config)
            try:
                values = json.loads(path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise DataError(f"cannot read config file {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(values, dict):
                raise DataError(f"config file {path} must hold a JSON object")
            sub = subparsers[args.command]
            known = {action.dest for action in sub._actions}
            unknown = set(values) - known
            if unknown:
                raise DataError(f"config file {path} has unknown keys: {sorted(unknown)}")
            sub.set_defaults(**values)
            args = parser.parse_args(argv)  # explicit flags still win
        return args.func(args)
    except TrackMILError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
