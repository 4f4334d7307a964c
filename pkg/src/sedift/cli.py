"""Command-line entry point: gen | train | predict | eval-recon | eval-match.

Every command is a deterministic function of (flags, config, seed): primary
outputs never embed wall-clock time or machine identity, so re-running with
the same arguments reproduces the same bytes. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import PipelineConfig
from .data import (DIRECTIONS, VARIANTS, DatasetBundle, generate_dataset,
                   load_dataset, make_samples, read_image, variant_flags,
                   write_image)
from .core import Image
from .errors import ConfigError, DataError, NumericError, SediftError
from .evalkit import (matching_report, matching_report_to_csv,
                      recon_report_to_csv, reconstruction_report,
                      relative_improvement, report_to_json)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import DiscriminatorNet, GeneratorConfig, GeneratorNet
from .radiometry import NoiseParams, SceneGenConfig
from .training import TrainConfig, history_to_csv, train
from .weather import NormalizationStats


def _load_config_file(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _write_manifest(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _generator_config(pcfg: PipelineConfig, fusion_mode: str = "concat") -> GeneratorConfig:
    return GeneratorConfig(height=pcfg.height, width=pcfg.width, in_channels=1,
                           out_channels=1, stage_count=pcfg.stage_count,
                           base_width=pcfg.base_width,
                           global_len=pcfg.global_vector_length,
                           fusion_mode=fusion_mode, dropout_body=pcfg.dropout_body,
                           dropout_skip=pcfg.dropout_skip)


def cmd_gen(args) -> int:
    cfg_file = _load_config_file(args.config)
    pcfg = PipelineConfig.make(args.profile, seed=args.seed,
                               **cfg_file.get("pipeline", {}))
    gen_cfg = SceneGenConfig.from_dict(cfg_file.get("generator", {}))
    noise = NoiseParams(**cfg_file.get("noise", {}))
    descriptor = generate_dataset(args.out, pcfg, n_scenes=args.scenes,
                                  gen_cfg=gen_cfg, noise=noise,
                                  weather_source=args.weather,
                                  workers=args.workers, force=args.force)
    _write_manifest(os.path.join(args.out, "run.json"), {
        "command": "gen",
        "config": pcfg.to_dict(),
        "seed": args.seed,
        "dataset_hash": descriptor["content_sha256"],
        "outputs": ["dataset.json", "weather.csv", "train.jsonl", "val.jsonl",
                    "test.jsonl", "images/"],
        "timestamps": descriptor["timestamp_range"],
    })
    print(f"dataset written to {args.out}: {descriptor['splits']} "
          f"hash {descriptor['content_sha256'][:12]}")
    return 0


def cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    zero_global, use_cgan = variant_flags(args.variant)
    pcfg = PipelineConfig.make(args.profile, seed=args.seed,
                               beta=1.0 if use_cgan else 0.0,
                               **cfg_file.get("pipeline", {}))
    bundle = load_dataset(args.data)
    stats = bundle.train_stats()
    train_samples = make_samples(bundle, "train", args.direction, zero_global, stats)
    val_samples = make_samples(bundle, "val", args.direction, zero_global, stats)
    tcfg = TrainConfig.from_pipeline(pcfg, **cfg_file.get("train", {}))
    generator = GeneratorNet(_generator_config(pcfg), seed=args.seed)
    discriminator = DiscriminatorNet(in_channels=2, base_width=pcfg.base_width,
                                     seed=args.seed + 1) if use_cgan else None
    result = train(generator, train_samples, val_samples, tcfg,
                   discriminator=discriminator)
    generator.params = result.params
    extra = {
        "variant": args.variant,
        "direction": args.direction,
        "profile": args.profile,
        "stats": stats.to_dict(),
        "dataset_hash": bundle.descriptor["content_sha256"],
        "best_val_l1": result.best_val_l1,
        "stop_reason": result.stop_reason,
        "epochs_run": result.epochs_run,
        "seed": args.seed,
    }
    save_checkpoint(generator, args.out, extra=extra)
    with open(args.out + ".history.csv", "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(result.history))
    _write_manifest(args.out + ".run.json", {
        "command": "train",
        "config": {**pcfg.to_dict(), **cfg_file.get("train", {})},
        "seed": args.seed,
        "dataset_hash": bundle.descriptor["content_sha256"],
        "checkpoints": [args.out],
        "outputs": [args.out, args.out + ".history.csv"],
        "timestamps": bundle.descriptor["timestamp_range"],
    })
    print(f"trained {args.variant} {args.direction}: best val L1 "
          f"{result.best_val_l1:.5f} after {result.epochs_run} epochs "
          f"({result.stop_reason})")
    return 0


def _samples_for_checkpoint(bundle: DatasetBundle, extra: dict, split: str):
    stats = NormalizationStats.from_dict(extra["stats"])
    zero_global, _ = variant_flags(extra["variant"])
    return make_samples(bundle, split, extra["direction"], zero_global, stats)


def _predict_images(generator: GeneratorNet, samples, batch_size: int = 4):
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([s.x for s in chunk])
        g = np.stack([s.g for s in chunk])
        y_hat, _ = generator.forward(x, g, mode="eval")
        preds.extend(y_hat[i] for i in range(len(chunk)))
    return preds


def cmd_predict(args) -> int:
    generator, extra = load_checkpoint(args.ckpt)
    bundle = load_dataset(args.data)
    samples = _samples_for_checkpoint(bundle, extra, args.split)
    os.makedirs(args.out, exist_ok=True)
    preds = _predict_images(generator, samples)
    index = {}
    for sample, pred in zip(samples, preds):
        rel = f"pred-{sample.scene_id}.sdft"
        write_image(os.path.join(args.out, rel),
                    Image(pred.astype(np.float32).astype(np.float64)))
        index[sample.scene_id] = rel
    _write_manifest(os.path.join(args.out, "predictions.json"), {
        "checkpoint": args.ckpt,
        "variant": extra["variant"],
        "direction": extra["direction"],
        "split": args.split,
        "files": index,
    })
    _write_manifest(os.path.join(args.out, "run.json"), {
        "command": "predict",
        "config": {"split": args.split},
        "seed": extra.get("seed"),
        "dataset_hash": bundle.descriptor["content_sha256"],
        "checkpoints": [args.ckpt],
        "outputs": sorted(index.values()) + ["predictions.json"],
        "timestamps": bundle.descriptor["timestamp_range"],
    })
    print(f"wrote {len(index)} predictions to {args.out}")
    return 0


def cmd_eval_recon(args) -> int:
    bundle = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    reports = {}
    for ckpt_path in args.ckpt:
        if not os.path.exists(ckpt_path):
            raise DataError(f"checkpoint not found: {ckpt_path}")
        generator, extra = load_checkpoint(ckpt_path)
        samples = _samples_for_checkpoint(bundle, extra, args.split)
        key = f"{extra['variant']}/{extra['direction']}"
        reports[key] = reconstruction_report(generator, samples)
    improvements = {}
    for direction in DIRECTIONS:
        reg = reports.get(f"regular-l1/{direction}")
        aug = reports.get(f"augmented-l1/{direction}")
        if reg and aug:
            improvements[direction] = relative_improvement(reg["all"]["l1"],
                                                           aug["all"]["l1"])
    payload = {"rows": reports, "relative_improvement": improvements}
    with open(os.path.join(args.out, "recon.json"), "w", encoding="utf-8") as fh:
        fh.write(report_to_json(payload))
    csv_parts = []
    for key in sorted(reports):
        csv_parts.append(f"# {key}\n" + recon_report_to_csv(reports[key]))
    with open(os.path.join(args.out, "recon.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(csv_parts))
    _write_manifest(os.path.join(args.out, "run.json"), {
        "command": "eval-recon",
        "config": {"split": args.split},
        "seed": None,
        "dataset_hash": bundle.descriptor["content_sha256"],
        "checkpoints": list(args.ckpt),
        "outputs": ["recon.json", "recon.csv"],
        "timestamps": bundle.descriptor["timestamp_range"],
    })
    print(report_to_json(payload), end="")
    return 0


def cmd_eval_match(args) -> int:
    bundle = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    by_direction = {}
    profile = None
    for ckpt_path in args.ckpt:
        if not os.path.exists(ckpt_path):
            raise DataError(f"checkpoint not found: {ckpt_path}")
        generator, extra = load_checkpoint(ckpt_path)
        profile = profile or extra.get("profile", "desk")
        samples = _samples_for_checkpoint(bundle, extra, args.split)
        preds = [p[:, :, 0] for p in _predict_images(generator, samples)]
        by_direction.setdefault(extra["direction"], {})[extra["variant"]] = preds
    radius = PipelineConfig.make(profile or args.profile).acceptance_radius_px
    outputs = []
    results = {}
    for direction, rows in sorted(by_direction.items()):
        entries = bundle.splits[args.split]
        pairs = [bundle.load_pair(e) for e in entries]
        if direction == "rgb2th":
            sources = [p.rgb_gray.plane() for p in pairs]
            refs = [p.thermal.plane() for p in pairs]
        else:
            sources = [p.thermal.plane() for p in pairs]
            refs = [p.rgb_gray.plane() for p in pairs]
        rows = {"no-prediction": sources, **rows}
        table = matching_report(rows, refs, radius=radius)
        results[direction] = table
        json_rel = f"matching_{direction}.json"
        csv_rel = f"matching_{direction}.csv"
        with open(os.path.join(args.out, json_rel), "w", encoding="utf-8") as fh:
            fh.write(report_to_json(table))
        with open(os.path.join(args.out, csv_rel), "w", encoding="utf-8") as fh:
            fh.write(matching_report_to_csv(table))
        outputs.extend([json_rel, csv_rel])
    _write_manifest(os.path.join(args.out, "run.json"), {
        "command": "eval-match",
        "config": {"split": args.split, "radius": radius},
        "seed": None,
        "dataset_hash": bundle.descriptor["content_sha256"],
        "checkpoints": list(args.ckpt),
        "outputs": outputs,
        "timestamps": bundle.descriptor["timestamp_range"],
    })
    print(report_to_json(results), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedift",
        description="Cross-modal appearance prediction and feature matching "
                    "on synthetic radiometric scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--weather", default=None, help="CSV path or URL; synthesized if omitted")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.add_argument("--config", default=None, help="JSON overrides")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one network variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--variant", choices=list(VARIANTS), required=True)
    p.add_argument("--direction", choices=list(DIRECTIONS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.add_argument("--config", default=None, help="JSON overrides")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted images for a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval-recon", help="per-category reconstruction L1 table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", action="append", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_eval_recon)

    p = sub.add_parser("eval-match", help="AUC/EER matching table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", action="append", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--profile", choices=["paper", "desk"], default="desk")
    p.set_defaults(func=cmd_eval_match)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except SediftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
