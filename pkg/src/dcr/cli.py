"""Command-line entry points.

Subcommands: gen-data, pretrain, train, eval, ablate, plot. Exit codes:
0 on success, 2 for configuration errors, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .curriculum import ScheduleSpec
from .dataset import generate_synthetic, windows_from_stream
from .engine import (
    ABLATION_VARIANTS,
    ConfigError,
    NumericFailure,
    TrainConfig,
    Trainer,
    build_heads,
    evaluate,
    evaluate_gap_sweep,
    pretrain,
    run_ablation,
)
from .feature_file import FeatureFileError, read_feature_file, write_feature_file
from .objectives import metric_report
from .profiles import (
    DESK_TRAIN_SEGMENTS,
    DESK_VAL_SEGMENTS,
    PROFILES,
    profile_config,
    profile_grammar,
    profile_layout,
)


def _parse_schedule(text: str) -> ScheduleSpec:
    if text == "instance":
        return ScheduleSpec(kind="instance_local")
    if text in ("linear", "exponential"):
        return ScheduleSpec(kind=text)
    if text.startswith("constant:"):
        return ScheduleSpec(kind="constant", constant=float(text.split(":", 1)[1]))
    raise ConfigError(f"unknown schedule {text!r} (instance | constant:<v> | linear | exponential)")


def _seed_of(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_config(args) -> TrainConfig:
    config = profile_config(args.profile, args.arch, seed=_seed_of(args))
    if getattr(args, "config", None):
        overrides = json.loads(Path(args.config).read_text())
        merged = config.to_dict()
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
        config = TrainConfig.from_dict(merged)
        if args.seed is not None:  # explicit flag wins over the config file
            config.seed = args.seed
    if getattr(args, "schedule", None):
        config.schedule = _parse_schedule(args.schedule)
    return config


def _load_windows(path, profile):
    stream, manifest = read_feature_file(path)
    return windows_from_stream(stream, manifest, profile_layout(profile))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    out = _out_dir(args)
    grammar = profile_grammar(args.profile, seed=_seed_of(args))
    if args.config:
        from .dataset import default_grammar

        overrides = json.loads(Path(args.config).read_text())
        overrides.setdefault("seed", _seed_of(args))
        grammar = default_grammar(**overrides)
    for split, n_segments, seed_offset in (
        ("train", args.train_segments, 0),
        ("val", args.val_segments, 1),
    ):
        stream, manifest = generate_synthetic(grammar, n_segments, seed=grammar.seed + seed_offset, id_prefix=split)
        path = out / f"{split}.dcrf"
        write_feature_file(stream, manifest, path)
        print(f"wrote {path} ({stream.shape[0]} frames, {len(manifest['segments'])} segments)")
    return 0


def _cmd_pretrain(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    data = _load_windows(args.data, args.profile)
    from .reasoners import build_reasoner

    model = build_reasoner(config.reasoner, seed=config.seed)
    log = pretrain(model, data, config)
    ckpt = out / "pretrained.dcrc"
    save_checkpoint(ckpt, model)
    log.to_csv(out / "pretrain_log.csv")
    last = log.rows[-1]
    print(f"pretrained {config.pretrain_epochs} epochs; "
          f"order loss {last['loss_order']:.4f}, position accuracy {last['position_accuracy']:.3f}")
    print(f"wrote {ckpt}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    train_data = _load_windows(args.data, args.profile)
    val_data = _load_windows(args.val, args.profile) if args.val else None
    if args.init:
        model, _ = load_checkpoint(args.init, seed=config.seed)
        if model.config.to_dict() != config.reasoner.to_dict():
            raise ConfigError("checkpoint architecture disagrees with the requested config")
    else:
        from .reasoners import build_reasoner

        model = build_reasoner(config.reasoner, seed=config.seed)
        if config.pretrain_epochs > 0 and config.reasoner.architecture == "transformer" and not args.no_pretrain:
            pretrain(model, train_data, config)
    heads = build_heads(train_data, config)
    trainer = Trainer(model, heads, train_data, config)
    log = trainer.run()
    log.to_csv(out / "train_log.csv")
    trainer.write_easiness_csv(out / "easiness.csv")
    save_checkpoint(out / "model.dcrc", model, extra=heads.params)
    print(f"trained {config.train_epochs} epochs; final loss {log.rows[-1]['loss_total']:.4f}")
    if val_data:
        results = evaluate(model, heads, val_data, config)
        report = metric_report(results)
        (out / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
        for head, m in results.items():
            print(f"{head}: top1 {m['top1']:.3f} top5 {m['top5']:.3f} recall@5 {m['class_mean_recall@5']:.3f}")
    print(f"wrote {out / 'model.dcrc'}")
    return 0


def _rebuild_heads(model, extra, data, config):
    heads = build_heads(data, config)
    for name, values in extra.items():
        if name in heads.params:
            heads.params[name].data = values.astype(config.reasoner.np_dtype)
    return heads


def _cmd_eval(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    data = _load_windows(args.data, args.profile)
    model, extra = load_checkpoint(args.checkpoint, seed=config.seed)
    config.reasoner = model.config
    heads = _rebuild_heads(model, extra, data, config)
    results = evaluate(model, heads, data, config)
    payload = metric_report(results)
    if args.sweep:
        sweep = evaluate_gap_sweep(model, heads, data, config)
        payload["gap_sweep"] = {str(r): m for r, m in sweep.items()}
    (out / "metrics.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    for head, m in results.items():
        print(f"{head}: top1 {m['top1']:.3f} top5 {m['top5']:.3f} recall@5 {m['class_mean_recall@5']:.3f}")
    print(f"wrote {out / 'metrics.json'}")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    train_data = _load_windows(args.data, args.profile)
    val_data = _load_windows(args.val, args.profile)
    variants = [v.strip() for v in args.suite.split(",") if v.strip()]
    result = run_ablation(variants, train_data, val_data, config)
    (out / "ablation.json").write_text(json.dumps(result["variants"], indent=1, sort_keys=True))
    from .plotting import write_table_csv

    write_table_csv(result["variants"], out / "ablation.csv")
    print(result["table"])
    print(f"wrote {out / 'ablation.json'}")
    return 0


def _cmd_plot(args) -> int:
    from . import plotting

    out = _out_dir(args)
    made = []
    if args.runlog:
        target = out / (Path(args.runlog).stem + ".svg")
        plotting.plot_runlog(args.runlog, target)
        made.append(target)
    if args.easiness:
        target = out / (Path(args.easiness).stem + ".svg")
        plotting.plot_easiness(args.easiness, target, summary_csv=out / (Path(args.easiness).stem + "_summary.csv"))
        made.append(target)
    if not made:
        raise ConfigError("plot needs --runlog and/or --easiness")
    for t in made:
        print(f"wrote {t}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcr", description="Curriculum training engine for sequence anticipation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config-file seed")
        p.add_argument("--profile", choices=PROFILES, default="desk")
        p.add_argument("--arch", choices=("transformer", "lstm"), default="transformer")
        p.add_argument("--config", help="JSON file of TrainConfig overrides")
        if data:
            p.add_argument("--data", required=True, help="feature file (.dcrf)")

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark")
    common(p)
    p.add_argument("--train-segments", type=int, default=DESK_TRAIN_SEGMENTS)
    p.add_argument("--val-segments", type=int, default=DESK_VAL_SEGMENTS)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="order-aware pre-training")
    common(p, data=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="context-removal training")
    common(p, data=True)
    p.add_argument("--val", help="validation feature file")
    p.add_argument("--init", help="checkpoint to start from (e.g. pretrained.dcrc)")
    p.add_argument("--no-pretrain", action="store_true", help="skip the pre-training phase")
    p.add_argument("--schedule", help="instance | constant:<v> | linear | exponential")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="test-time evaluation")
    common(p, data=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sweep", action="store_true", help="also sweep the anticipation gap")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and compare scheme variants")
    common(p, data=True)
    p.add_argument("--val", required=True)
    p.add_argument("--suite", default=",".join(ABLATION_VARIANTS), help="comma-separated variant names")
    p.add_argument("--schedule", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot", help="render run-log / easiness charts")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--runlog", help="run-log CSV")
    p.add_argument("--easiness", help="easiness trace CSV")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FeatureFileError, CheckpointError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
