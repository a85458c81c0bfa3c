"""Command-line surface binding the pipeline end to end.

Subcommands: ``gen-simple2d``, ``gen-complex2d``, ``crop``, ``train``,
``eval``. Settings come from a JSON config file with flag overrides
(flags > file > defaults); the seed is mandatory and is the only source of
randomness, so any command rerun with the same config and seed reproduces
its outputs byte for byte.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .augment import AugPolicy, AugSeed
from .datasets import DataError, ParseError, read_manifest
from .imaging import Color, DecodeError, save_png
from .localization import (
    DegenerateBoxError,
    LowConfidenceError,
    MissingImageError,
    crop_torso,
    ingest_keypoints,
)
from .nn import CnnConfig, load_checkpoint, save_checkpoint
from .synth import (
    ConfigError,
    EmptyBackgroundsError,
    FontLoadError,
    GenConfig,
    MissingClassError,
    Palette,
    gen_complex2d,
    gen_simple2d,
)
from .train import DivergedError, HeadMismatchError, StageConfig, run_curriculum
from .infer import ENSEMBLE_RULES, confusion_heatmap, confusion_to_csv, evaluate

_CONFIG_ERRORS = (
    ConfigError,
    FontLoadError,
    HeadMismatchError,
    ValueError,
    KeyError,
    json.JSONDecodeError,
)
_DATA_ERRORS = (
    DataError,
    DecodeError,
    DivergedError,
    EmptyBackgroundsError,
    MissingClassError,
    MissingImageError,
    ParseError,
    FileNotFoundError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _require_seed(args, cfg: dict) -> AugSeed:
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is mandatory (set --seed or \"seed\" in the config)")
    return AugSeed(int(seed))


def _cfg_path(args, cfg: dict, flag: str, key: str) -> Path:
    value = getattr(args, flag, None)
    if value is None:
        value = cfg.get("paths", {}).get(key)
    if value is None:
        raise ConfigError(f"--{flag.replace('_', '-')} or paths.{key} is required")
    return Path(value)


def _build_genconfig(cfg: dict, seed: AugSeed) -> GenConfig:
    g = dict(cfg.get("generator", {}))
    classes = g.pop("classes", None)
    kwargs = {}
    if classes is not None:
        kwargs["class_range"] = (
            tuple(range(int(classes))) if isinstance(classes, int) else tuple(classes)
        )
    for key in (
        "per_class_target",
        "per_color_pool",
        "canvas",
        "include_no_number_class",
        "font",
    ):
        if key in g:
            kwargs[key] = g[key]
    if "glyph_scale" in g:
        kwargs["glyph_scale"] = tuple(g["glyph_scale"])
    return GenConfig(seed=seed, **kwargs)


def _build_palette(cfg: dict) -> Palette:
    combos = cfg.get("palette")
    if not combos:
        return Palette.default()
    pairs = tuple(
        (Color(*entry["background"]), Color(*entry["foreground"])) for entry in combos
    )
    return Palette(combinations=pairs)


def _build_policies(cfg: dict) -> dict[str, AugPolicy]:
    policies = {}
    for level, params in cfg.get("policies", {}).items():
        policies[level] = AugPolicy(level=level, **params)
    return policies


def _print_counts(manifest) -> None:
    for label, count in sorted(manifest.class_counts().items()):
        print(f"class {label}: {count}")
    print(f"total: {len(manifest)}")


def _dry_run_counts(config: GenConfig) -> None:
    labels = list(config.class_range)
    if config.include_no_number_class:
        labels.append(100)
    for label in labels:
        print(f"class {label}: {config.per_class_target} (planned)")
    print(f"total: {config.per_class_target * len(labels)} (planned)")


def cmd_gen_simple2d(args) -> int:
    cfg = _load_config(args.config)
    seed = _require_seed(args, cfg)
    gen_config = _build_genconfig(cfg, seed)
    palette = _build_palette(cfg)
    policies = _build_policies(cfg)
    out = _cfg_path(args, cfg, "out", "simple2d")
    if args.dry_run:
        _dry_run_counts(gen_config)
        return 0
    manifest = gen_simple2d(gen_config, palette, out, policies=policies, jobs=args.jobs)
    _print_counts(manifest)
    return 0


def cmd_gen_complex2d(args) -> int:
    cfg = _load_config(args.config)
    seed = _require_seed(args, cfg)
    gen_config = _build_genconfig(cfg, seed)
    out = _cfg_path(args, cfg, "out", "complex2d")
    backgrounds = _cfg_path(args, cfg, "backgrounds", "backgrounds")
    numbers_path = _cfg_path(args, cfg, "numbers", "numbers_manifest")
    if not backgrounds.is_dir():
        raise ConfigError(f"backgrounds directory not found: {backgrounds}")
    if not numbers_path.exists():
        raise ConfigError(f"numbers manifest not found: {numbers_path}")
    if args.dry_run:
        _dry_run_counts(gen_config)
        return 0
    numbers = read_manifest(numbers_path)
    manifest = gen_complex2d(numbers, backgrounds, gen_config, out, jobs=args.jobs)
    _print_counts(manifest)
    return 0


def cmd_crop(args) -> int:
    cfg = _load_config(args.config)
    factor = args.factor if args.factor is not None else cfg.get("crop_factor", 0.6)
    min_conf = (
        args.min_confidence
        if args.min_confidence is not None
        else cfg.get("min_confidence", 0.5)
    )
    keypoints = _cfg_path(args, cfg, "keypoints", "keypoints")
    images = _cfg_path(args, cfg, "images", "images")
    out = _cfg_path(args, cfg, "out", "crops")
    if not keypoints.exists():
        raise ConfigError(f"keypoint file not found: {keypoints}")
    if not images.is_dir():
        raise ConfigError(f"images directory not found: {images}")
    with open(keypoints, encoding="utf-8") as fh:
        n_lines = sum(1 for line in fh if line.strip())
    pairs = ingest_keypoints(keypoints, images)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for i, (img, kp) in enumerate(pairs):
        try:
            crop = crop_torso(img, kp, factor=factor, min_confidence=min_conf)
        except (LowConfidenceError, DegenerateBoxError) as exc:
            print(f"warning: record {i}: {exc}", file=sys.stderr)
            continue
        save_png(crop, out / f"crop_{i:05d}.png")
        written += 1
    print(f"wrote {written} crops ({n_lines - written} records skipped)")
    if n_lines > 0 and written == 0:
        return _fail("no usable keypoint records", 2)
    return 0


def _build_stages(cfg: dict, objective: str | None, policies: dict) -> list[StageConfig]:
    raw_stages = cfg.get("stages")
    if not raw_stages:
        raise ConfigError("config has no \"stages\" list")
    stages = []
    for entry in raw_stages:
        entry = dict(entry)
        manifest_path = Path(entry.pop("manifest"))
        if not manifest_path.exists():
            raise ConfigError(f"stage manifest not found: {manifest_path}")
        stage_objective = objective or entry.pop("objective", None)
        entry.pop("objective", None)
        if stage_objective is None:
            raise ConfigError("stage objective missing (set --objective or per stage)")
        policy = entry.pop("policy", None)
        if isinstance(policy, str):
            policy = policies.get(policy, AugPolicy(level=policy))
        stages.append(
            StageConfig(
                manifest=read_manifest(manifest_path),
                objective=stage_objective,
                policy=policy,
                **entry,
            )
        )
    return stages


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    seed = _require_seed(args, cfg)
    out = _cfg_path(args, cfg, "out", "train_out")
    policies = _build_policies(cfg)
    stages = _build_stages(cfg, args.objective, policies)
    head = 101 if stages[0].objective == "multiclass" else 21
    model_cfg = dict(cfg.get("model", {}))
    model_cfg.setdefault("seed", seed.root % 2**31)
    if "conv_channels" in model_cfg:
        model_cfg["conv_channels"] = tuple(model_cfg["conv_channels"])
    config = CnnConfig(head=head, **model_cfg)
    resume_model = None
    if args.resume:
        if not Path(args.resume).exists():
            raise ConfigError(f"checkpoint not found: {args.resume}")
        resume_model, _ = load_checkpoint(args.resume)
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint_stage(i, stage, stage_model, report):
        save_checkpoint(
            out / f"stage_{i}_{stage.name}.ckpt.npz",
            stage_model,
            meta={"stage": stage.name, "objective": stage.objective},
        )
        with open(out / f"stage_{i}_{stage.name}_report.json", "w") as fh:
            json.dump(report.to_dict(drop_timing=True), fh, indent=2, sort_keys=True)
        print(
            f"stage {stage.name}: best epoch {report.selected_epoch} "
            f"val acc {report.selected_val_acc:.4f} "
            f"({report.wall_clock_s:.1f}s)",
            file=sys.stderr,
        )

    model, reports = run_curriculum(
        config, stages, seed, model=resume_model, on_stage=checkpoint_stage
    )
    save_checkpoint(
        out / "model.ckpt.npz",
        model,
        meta={"objective": stages[0].objective, "stages": [s.name for s in stages]},
    )
    print(f"final checkpoint: {out / 'model.ckpt.npz'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    threshold = args.threshold if args.threshold is not None else cfg.get("threshold", 0.5)
    out = _cfg_path(args, cfg, "out", "eval_out")
    for name in ("mc", "ml"):
        p = getattr(args, name)
        if p is None or not Path(p).exists():
            raise ConfigError(f"--{name} checkpoint missing or not found: {p}")
    test_path = _cfg_path(args, cfg, "test", "test_manifest")
    if not test_path.exists():
        raise ConfigError(f"test manifest not found: {test_path}")
    mc_model, _ = load_checkpoint(args.mc)
    ml_model, _ = load_checkpoint(args.ml)
    test = read_manifest(test_path)
    train_support = None
    if args.train_manifest:
        if not Path(args.train_manifest).exists():
            raise ConfigError(f"train manifest not found: {args.train_manifest}")
        train_support = read_manifest(args.train_manifest).class_counts()
    report = evaluate(
        mc_model,
        ml_model,
        test,
        threshold=threshold,
        rule=args.rule,
        train_support=train_support,
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    confusion_to_csv(report.confusion, out / "confusion.csv")
    if args.heatmap:
        confusion_heatmap(report.confusion, out / "confusion.png")
    for head, acc in report.accuracy.items():
        print(f"{head} accuracy: {acc:.4f}")
    print(f"agreement rate: {report.agreement_rate:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jerseynum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")

    p = sub.add_parser("gen-simple2d", help="generate the flat-background number dataset")
    common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers over classes")
    p.add_argument("--dry-run", action="store_true", help="print planned counts only")
    p.set_defaults(func=cmd_gen_simple2d)

    p = sub.add_parser("gen-complex2d", help="composite numbers onto background images")
    common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--backgrounds", help="directory of background PNGs")
    p.add_argument("--numbers", help="manifest of number images (simple2d output)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_gen_complex2d)

    p = sub.add_parser("crop", help="crop torso regions from keypoint records")
    common(p)
    p.add_argument("--keypoints", help="JSON-lines keypoint file")
    p.add_argument("--images", help="directory the records' image paths resolve in")
    p.add_argument("--out", help="output directory for crops")
    p.add_argument("--factor", type=float, help="box expansion factor (default 0.6)")
    p.add_argument("--min-confidence", type=float, help="keypoint confidence floor")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("train", help="run the staged curriculum for one objective")
    common(p)
    p.add_argument("--out", help="output directory for checkpoints/reports")
    p.add_argument("--objective", choices=("multiclass", "multilabel"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate both heads and the ensemble")
    common(p)
    p.add_argument("--mc", help="multi-class checkpoint")
    p.add_argument("--ml", help="multi-label checkpoint")
    p.add_argument("--test", help="test manifest")
    p.add_argument("--out", help="output directory for reports")
    p.add_argument("--threshold", type=float)
    p.add_argument("--rule", choices=ENSEMBLE_RULES, default="mc_first")
    p.add_argument("--train-manifest", help="training manifest for low-frequency support")
    p.add_argument("--heatmap", action="store_true", help="also write confusion.png")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        return _fail(str(exc), 2)
    except _CONFIG_ERRORS as exc:
        return _fail(str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
