"""Command-line entry point: ``flowbox <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .metrics import read_metrics
from .plots import KINDS, plot_report

RUN_COMMANDS = ("pretrain", "finetune", "bespoke", "jointembed", "sample", "eval")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override its fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--run-id")
    p.add_argument("--out-dir")
    p.add_argument("--data", help="corpus directory (aligned) or points directory (mixture)")
    p.add_argument("--init-checkpoint")
    p.add_argument("--bespoke-checkpoint")
    p.add_argument("--lora-rank", type=int)
    p.add_argument("--method", help="solver method")
    p.add_argument("--step-size", type=float)
    p.add_argument("--guidance", type=float, help="CFG weight")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowbox", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a toy corpus or mixture sample set")
    g.add_argument("--kind", choices=("aligned", "mixture"), required=True)
    g.add_argument("--name", default="eight_gaussians")
    g.add_argument("--n", type=int, default=20000)
    g.add_argument("--n-eval", type=int, default=2000)
    g.add_argument("--corpus", help="JSON object of corpus config overrides")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    for name in RUN_COMMANDS:
        p = sub.add_parser(name, help=f"run mode {name}")
        _add_run_flags(p)
        if name == "finetune":
            p.add_argument("--stage", choices=("speech", "sound", "unified"))

    pl = sub.add_parser("plot", help="render an SVG from a metrics CSV")
    pl.add_argument("--metrics", required=True, nargs="+")
    pl.add_argument("--kind", choices=KINDS, required=True)
    pl.add_argument("--metric", help="metric name (loss-curve) or prefix (error-vs-nfe)", default=None)
    pl.add_argument("--points", help="points file for scatter2d")
    pl.add_argument("--out", required=True)
    return ap


def _raw_config(args) -> dict:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    mode = args.command
    if mode == "finetune":
        if args.stage:
            mode = f"finetune-{args.stage}"
        elif str(raw.get("mode", "")).startswith("finetune-"):
            mode = raw["mode"]
        else:
            raise ConfigError(["mode: finetune needs --stage or a finetune-* mode in the config"])
    raw["mode"] = mode
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("run_id", "run_id"), ("out_dir", "out_dir"),
                      ("init_checkpoint", "init_checkpoint"), ("bespoke_checkpoint", "bespoke_checkpoint"),
                      ("lora_rank", "lora_rank")):
        val = getattr(args, flag)
        if val is not None:
            raw[key] = val
    if args.data:
        raw.setdefault("data", {"kind": "aligned"})["path"] = args.data
    if args.method or args.step_size:
        s = raw.setdefault("solver", {})
        if args.method:
            s["method"] = args.method
        if args.step_size:
            s["step_size"] = args.step_size
    if args.guidance is not None:
        raw.setdefault("guidance", {})["weight"] = args.guidance
    return raw


def _plot(args) -> Path:
    if args.kind == "scatter2d":
        from flowbox.toydata import load_points
        if not args.points:
            raise ValueError("scatter2d needs --points")
        return plot_report({Path(args.points).stem: load_points(args.points)}, "scatter2d", args.out)
    series: dict = defaultdict(lambda: ([], []))
    for path in args.metrics:
        for r in read_metrics(path):
            m = r["metric"]
            if args.kind == "loss-curve" and m == (args.metric or "loss"):
                tag = r["run_id"]
            elif args.kind == "error-vs-nfe" and m.startswith((args.metric or "rmse") + "@"):
                tag = m.split("@", 1)[1]
            else:
                continue
            series[tag][0].append(r["step"])
            series[tag][1].append(r["value"])
    return plot_report({k: (np.array(x), np.array(y)) for k, (x, y) in series.items()}, args.kind, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from . import runner

    try:
        if args.command == "gen-data":
            spec = {"kind": args.kind, "name": args.name, "n": args.n, "n_eval": args.n_eval,
                    "corpus": json.loads(args.corpus) if args.corpus else {}}
            print(runner.gen_data(spec, args.out, args.seed))
        elif args.command == "plot":
            print(_plot(args))
        else:
            cfg = load_config(_raw_config(args))
            print(json.dumps(runner.run(cfg), sort_keys=True, default=str))
    except (ConfigError, CheckpointError, runner.RunError, ValueError, KeyError, OSError,
            FloatingPointError, RuntimeError) as err:
        print(f"flowbox {args.command}: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
