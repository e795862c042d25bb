"""Command line entry point: ``snapdistill run`` and ``snapdistill eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .data import ImageFormat, load_split_pair
from .errors import SnapDistillError
from .evaluation import ensemble_error, evaluate
from .experiment import run_experiment
from .snapshots import load_snapshot

log = logging.getLogger("snapdistill")

# flag -> config key; every flag defaults to None so unset flags never override the file
RUN_FLAGS = {
    "--mode": ("mode", str, "bl, se or sd"),
    "--model": ("model", str, "mlp, mlp:W1,W2,..., or resnet<A> with A = 6n+2"),
    "--epochs": ("epochs", int, None),
    "--batch": ("batch", int, "mini-batch size"),
    "--k": ("k", int, "number of mini-generations"),
    "--temp": ("temp", float, "distillation temperature T"),
    "--alpha": ("alpha", float, "base learning rate of every mini-generation"),
    "--lambda-s": ("lambda_s", float, "override the one-hot loss weight"),
    "--lambda-t": ("lambda_t", float, "override the teacher loss weight"),
    "--momentum": ("momentum", float, None),
    "--weight-decay": ("weight_decay", float, None),
    "--seed": ("seed", int, None),
    "--seeds": ("seeds", str, "comma-separated seed sweep, run sequentially"),
    "--data": ("data", str, "synth, synth-hier, or a directory holding train.bin/test.bin"),
    "--out": ("out", str, "run directory (default runs/<mode>-<model>-s<seed>)"),
    "--resume": ("resume", str, "checkpoint to continue from"),
    "--fork-seed": ("fork_seed", int, "fork the resumed checkpoint with a new randomization seed"),
    "--classes": ("classes", int, None),
    "--per-class": ("per_class", int, None),
    "--test-per-class": ("test_per_class", int, None),
    "--dim": ("dim", int, "synthetic input dimension (mlp)"),
    "--separation": ("separation", float, None),
    "--image-size": ("image_size", int, None),
    "--channels": ("channels", int, None),
    "--dtype": ("dtype", str, None),
    "--padding": ("padding", str, "constant or reflect"),
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snapdistill", description="Snapshot distillation training toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration (or a seed sweep)")
    run.add_argument("--config", help="flat key = value config file")
    for flag, (dest, typ, help_) in RUN_FLAGS.items():
        run.add_argument(flag, dest=dest, type=typ, default=None, help=help_)
    run.add_argument("--fork-restart", dest="fork_restart", action="store_const", const=True, default=None,
                     help="restart the cosine schedule in the fork instead of continuing it")
    run.add_argument("--no-augment", dest="augment", action="store_const", const=False, default=None)

    ev = sub.add_parser("eval", help="score snapshot files on a binary dataset, with ensemble")
    ev.add_argument("snapshots", nargs="+")
    ev.add_argument("--data", required=True, help="directory holding train.bin/test.bin")
    ev.add_argument("--temp", type=float, default=1.0, help="ensemble temperature (1 for SE)")
    ev.add_argument("--classes", type=int, required=True)
    ev.add_argument("--channels", type=int, default=3)
    ev.add_argument("--image-size", type=int, default=32)
    return p


def _cmd_run(args) -> int:
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "quiet") and v is not None}
    outputs = run_experiment(args.config, overrides)
    for o in outputs:
        print(json.dumps(o.summary, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    from pathlib import Path

    root = Path(args.data)
    fmt = ImageFormat(args.channels, args.image_size, args.image_size, args.classes)
    _, test = load_split_pair(root / "train.bin", root / "test.bin", fmt)
    snaps = [load_snapshot(p) for p in args.snapshots]
    out = {"per_snapshot": [evaluate(s, test).top1 for s in snaps]}
    if len(snaps) >= 2:
        out["ensemble"] = ensemble_error(snaps, test, args.temp)
    print(json.dumps(out))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _cmd_run(args) if args.command == "run" else _cmd_eval(args)
    except (SnapDistillError, FileNotFoundError, OSError) as e:
        print(f"snapdistill: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
