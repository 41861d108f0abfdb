"""Command-line entry point: ``aerialmpc {collect,train,track,follow,replay}``.

Exit codes: 0 ok, 2 usage error, 3 malformed config, 4 missing artifact, 5 plant divergence,
6 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..plant import PlantDivergence
from ..residual import mse, save_params, train_offline
from .config import VARIANTS, ConfigError, load_config
from .runner import (EXIT_ARTIFACT, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, MissingArtifact,
                     collect_dataset, load_dataset, metrics_from_log, run_experiment)

DEFAULT_DATASET = "runs/dataset.csv"


def _overrides(args, **extra) -> dict:
    ov = dict(extra)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        ov[f"{section}__{name}"] = value
    if args.seed is not None:
        ov["experiment__seed"] = args.seed
        ov["residual__seed"] = args.seed
    return ov


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file layered over the packaged defaults")
    p.add_argument("--seed", type=int, help="seed for plant noise and network training")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a single config key (repeatable)")


def _add_run(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--variant", choices=VARIANTS, help="controller variant (default from config)")
    p.add_argument("--out", type=Path, help="per-cycle CSV log (metrics and timing go beside it)")
    p.add_argument("--model", type=Path, help="residual model artifact for modified+residual")
    p.add_argument("--duration", type=float, help="simulated seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerialmpc",
        description="Predictive coordinated control of a simulated aerial manipulator.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("collect", help="scripted flights that generate the residual training set")
    _add_common(p)
    p.add_argument("--out", type=Path, default=Path(DEFAULT_DATASET), help="dataset CSV")
    p.add_argument("--duration", type=float, help="seconds per collection stage")

    p = sub.add_parser("train", help="offline residual training on a collected dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, default=Path(DEFAULT_DATASET), help="dataset CSV")
    p.add_argument("--out", type=Path, help="model artifact (default: [experiment] model)")
    p.add_argument("--epochs", type=int, help="training epochs (default from config)")

    p = sub.add_parser("track", help="clover trajectory tracking experiment")
    _add_run(p)
    p = sub.add_parser("follow", help="moving-target following experiment")
    _add_run(p)

    p = sub.add_parser("replay", help="recompute run metrics from a logged CSV")
    p.add_argument("log", type=Path, help="log written by track or follow")
    p.add_argument("--config", type=Path, help="config supplying the stable-window threshold")
    return parser


def _collect(args) -> int:
    extra = {} if args.duration is None else {"collect__stage_duration": args.duration}
    cfg = load_config(args.config, experiment__scenario="collect", **_overrides(args, **extra))
    rows = collect_dataset(cfg, args.out)
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def _train(args) -> int:
    extra = {} if args.epochs is None else {"residual__epochs": args.epochs}
    cfg = load_config(args.config, **_overrides(args, **extra))
    if not args.data.exists():
        raise MissingArtifact(f"dataset not found: {args.data}")
    X, Y = load_dataset(args.data)
    r = cfg.residual
    params = train_offline(X, Y, lr=r.lr_offline, epochs=r.epochs, batch_size=r.batch_size, seed=r.seed)
    out = args.out or cfg.model_path
    out.parent.mkdir(parents=True, exist_ok=True)
    final = mse(params, X, Y)
    save_params(params, out, meta={"epochs": r.epochs, "rows": len(X), "seed": r.seed, "config": cfg.digest})
    print(f"trained on {len(X)} rows, final mse {final:.6e}, wrote {out}")
    return EXIT_OK


def _run(args, scenario: str) -> int:
    extra = {"experiment__scenario": scenario}
    if args.variant:
        extra["experiment__variant"] = args.variant
    if args.model:
        extra["experiment__model"] = str(args.model)
    if args.duration is not None:
        extra["experiment__duration"] = args.duration
    cfg = load_config(args.config, **_overrides(args, **extra))
    result = run_experiment(cfg, output=args.out)
    print(json.dumps(result.metrics.to_dict(), indent=2, sort_keys=True))
    if result.message:
        print(result.message, file=sys.stderr)
    return result.exit_code


def _replay(args) -> int:
    cfg = load_config(args.config)
    if not args.log.exists():
        raise MissingArtifact(f"log not found: {args.log}")
    m = metrics_from_log(args.log, cfg.stable_threshold, cfg.stable_hold)
    print(json.dumps(m.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"collect": _collect, "train": _train, "track": lambda a: _run(a, "clover"),
                "follow": lambda a: _run(a, "moving_target"), "replay": _replay}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except PlantDivergence as exc:
        print(f"plant diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
