"""Command-line driver: train, sweep, evaluate, report, synth.

Exit codes: 0 success, 1 runtime failure (training abort, I/O), 2 usage
error (bad flags, bad config). Config values resolve in order: built-in
defaults, then the --config file, then --set overrides, then dedicated
flags. The fully resolved config is persisted with every run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbones import Backbone
from .checkpoint import load_checkpoint
from .config import METHODS, TrainConfig, parse_flat_config, parse_value
from .data import load_image_folder
from .errors import ConfigError, SslmatchError
from .evaluation import evaluate_split
from .experiment import (SSL_METHODS, fixmatch_primary_grid, mixmatch_primary_grid,
                         run_training, runs_root, secondary_grid, sweep, transfer_grid)
from .report import accuracy_grid, collect_runs, render_table, write_csv, write_plot
from .synth import SPLIT_COUNTS, generate_dataset


def _parse_n_labeled(text: str):
    if text.lower() == "all":
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'all', got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslmatch",
                                     description="Semi-supervised image classification runs")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training configuration")
    train.add_argument("--method", choices=METHODS, required=True)
    train.add_argument("--data", required=True, help="image-folder dataset root")
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--n-labeled", type=_parse_n_labeled, default=argparse.SUPPRESS,
                       help="labeled subset size, or 'all'")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", help="results store root (default $SSLMATCH_RUNS_DIR or ./runs)")
    train.add_argument("--sweep-name", default="adhoc")
    train.add_argument("--force", action="store_true",
                       help="redo a run whose config hash already completed")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override any config key")

    swp = sub.add_parser("sweep", help="run a hyperparameter grid")
    swp.add_argument("--method", choices=list(SSL_METHODS) + ["transfer"], required=True)
    swp.add_argument("--stage", choices=["primary", "secondary"], default="primary")
    swp.add_argument("--data", required=True)
    swp.add_argument("--config", help="base config file for the sweep")
    swp.add_argument("--n-labeled", type=_parse_n_labeled, action="append", default=None,
                     help="secondary stage: repeat for each labeled subset size")
    swp.add_argument("--seed", type=int, default=None)
    swp.add_argument("--out")
    swp.add_argument("--max-configs", type=int, default=None,
                     help="truncate the grid to its first N points")
    swp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     dest="overrides")

    ev = sub.add_parser("evaluate", help="recompute test accuracy for a stored run")
    ev.add_argument("--run", required=True, help="run directory")
    ev.add_argument("--data", required=True)

    rep = sub.add_parser("report", help="summarize completed runs")
    rep.add_argument("--runs", help="results store root (default $SSLMATCH_RUNS_DIR or ./runs)")
    rep.add_argument("--format", choices=["table", "csv", "plot"], default="table")
    rep.add_argument("--out", help="output path for csv/plot formats")

    syn = sub.add_parser("synth", help="generate the synthetic grating dataset")
    syn.add_argument("--out", required=True)
    syn.add_argument("--classes", type=int, default=4)
    syn.add_argument("--train", type=int, default=SPLIT_COUNTS["train"])
    syn.add_argument("--val", type=int, default=SPLIT_COUNTS["val"])
    syn.add_argument("--test", type=int, default=SPLIT_COUNTS["test"])
    syn.add_argument("--side", type=int, default=32)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _parse_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = parse_value(value)
    return overrides


def _resolve_config(args) -> TrainConfig:
    flat: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        flat.update(parse_flat_config(path.read_text()))
    flat.update(_parse_overrides(args.overrides))
    if getattr(args, "method", None):
        flat["method"] = args.method
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    if "n_labeled" in vars(args) and not isinstance(args.n_labeled, list):
        flat["n_l"] = args.n_labeled
    return TrainConfig().with_overrides(flat)


def _load_data(args, cfg: TrainConfig):
    return load_image_folder(args.data, image_side=cfg.image_side)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    splits = _load_data(args, cfg)
    result = run_training(cfg, splits, runs_dir=args.out or runs_root(),
                          sweep_name=args.sweep_name,
                          existing="overwrite" if args.force else "error")
    test = "n/a" if result.test_acc is None else f"{100 * result.test_acc:.2f}%"
    print(f"run {result.run_hash}: best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f}, test acc {test}")
    print(f"artifacts: {result.run_dir}")
    return 0


def cmd_sweep(args) -> int:
    base = _resolve_config(args)
    splits = _load_data(args, base)
    if args.stage == "primary":
        grids = {"mixmatch": mixmatch_primary_grid, "fixmatch": fixmatch_primary_grid,
                 "transfer": transfer_grid}
        grid = grids[args.method]()
        n_l_values = None
    else:
        if args.method == "transfer":
            raise ConfigError("the secondary stage applies to SSL methods only")
        grid = secondary_grid(args.method)
        if not args.n_labeled:
            raise ConfigError("secondary sweep needs at least one --n-labeled value")
        n_l_values = args.n_labeled
    result = sweep(args.stage, base, grid, splits, runs_dir=args.out or runs_root(),
                   n_l_values=n_l_values, max_configs=args.max_configs)
    completed = [r for r in result.ranked() if r.status == "complete"]
    failed = [r for r in result.rows if r.status != "complete"]
    print(f"sweep finished: {len(completed)} completed, {len(failed)} failed")
    for i, row in enumerate(completed[:10], start=1):
        print(f"{i:2d}. val loss {row.best_val_loss:.4f}  "
              f"test acc {('n/a' if row.test_acc is None else f'{100 * row.test_acc:.2f}%')}  "
              f"{row.run_hash}  {row.overrides}")
    for row in failed:
        print(f"failed: {row.overrides} -> {row.status}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    ckpt = load_checkpoint(run_dir / "checkpoint.bin")
    cfg = TrainConfig.from_flat(parse_flat_config((run_dir / "config.resolved").read_text()))
    splits = load_image_folder(args.data, image_side=cfg.image_side)
    if not splits.test:
        raise ConfigError("dataset has no test split to evaluate on")
    sample = splits.test[0].image
    model = Backbone(ckpt.architecture_id, num_classes=ckpt.num_classes,
                     in_channels=int(sample.shape[0]), input_side=cfg.image_side,
                     seed=cfg.seed)
    loss, acc = evaluate_split(model, splits.test, params=ckpt.eval_vector())
    print(f"test loss {loss:.4f}, test acc {100 * acc:.2f}% (epoch {ckpt.epoch})")
    return 0


def cmd_report(args) -> int:
    records = collect_runs(args.runs or runs_root())
    if not records:
        print("error: no completed runs found", file=sys.stderr)
        return 1
    grid = accuracy_grid(records)
    if args.format == "table":
        print(render_table(grid), end="")
    elif args.format == "csv":
        out = args.out or "report.csv"
        write_csv(grid, out)
        print(f"wrote {out}")
    else:
        out = args.out or "report.png"
        write_plot(grid, out)
        print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    out = generate_dataset(args.out, num_classes=args.classes, side=args.side,
                           seed=args.seed,
                           counts={"train": args.train, "val": args.val, "test": args.test})
    total = args.classes * (args.train + args.val + args.test)
    print(f"wrote {total} images under {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "sweep": cmd_sweep, "evaluate": cmd_evaluate,
                "report": cmd_report, "synth": cmd_synth}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SslmatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
