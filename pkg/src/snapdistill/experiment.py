"""Config-driven experiment runs: data, training, checkpoints, metrics, summary."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import format_config, load_config_file, merge
from .data import Dataset, ImageFormat, load_split_pair, synth_mixture
from .errors import ConfigError
from .evaluation import EvalReport, build_report
from .models import ModelSpec
from .schedule import Mode
from .snapshots import fork_run, load_checkpoint
from .trainer import RunConfig, TrainResult, Trainer

log = logging.getLogger(__name__)


def load_datasets(cfg: dict[str, Any], model_name: str) -> tuple[Dataset, Dataset]:
    data = cfg["data"]
    is_resnet = model_name.startswith("resnet")
    if data in ("synth", "synth-hier"):
        seed = cfg["seed"] if cfg["data_seed"] is None else cfg["data_seed"]
        if is_resnet:
            shape = (cfg["channels"], cfg["image_size"], cfg["image_size"])
            dim = shape[0] * shape[1] * shape[2]
        else:
            shape, dim = None, cfg["dim"]
        common = dict(
            num_classes=cfg["classes"], dim=dim, separation=cfg["separation"], seed=seed,
            hierarchical=data == "synth-hier", num_superclasses=cfg["superclasses"],
            within_ratio=cfg["within"], image_shape=shape,
        )
        train = synth_mixture(per_class=cfg["per_class"], split="train", **common)
        test = synth_mixture(per_class=cfg["test_per_class"], split="test", **common)
        return train, test

    root = Path(data)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset path not found: {root}")
    train_path, test_path = root / "train.bin", root / "test.bin"
    for p in (train_path, test_path):
        if not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    fmt = ImageFormat(cfg["channels"], cfg["image_size"], cfg["image_size"], cfg["classes"], cfg["label_bytes"])
    return load_split_pair(train_path, test_path, fmt)


def run_config_from(cfg: dict[str, Any], train: Dataset, seed: int) -> RunConfig:
    if train.is_image:
        c, h, _ = train.input_shape
        spec = ModelSpec.from_name(cfg["model"], train.num_classes, in_channels=c, image_size=h)
    else:
        spec = ModelSpec.from_name(cfg["model"], train.num_classes, input_dim=train.input_shape[0])
    return RunConfig(
        model=spec,
        mode=Mode.parse(cfg["mode"]),
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        k=cfg["k"],
        temperature=cfg["temp"],
        alpha=cfg["alpha"],
        lambda_s=cfg["lambda_s"],
        lambda_t=cfg["lambda_t"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        decay_bn=cfg["decay_bn"],
        seed=seed,
        augment=cfg["augment"],
        padding_mode=cfg["padding"],
        dtype=cfg["dtype"],
        dataset=cfg["data"],
    )


@dataclass
class ExperimentOutput:
    out_dir: Path
    result: TrainResult
    report: EvalReport
    summary: dict


def run_single(cfg: dict[str, Any], seed: int, out_dir: Path) -> ExperimentOutput:
    train, test = load_datasets(cfg, cfg["model"])
    rc = run_config_from(cfg, train, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config({**cfg, "seed": seed}))

    state = None
    if cfg["resume"]:
        state = load_checkpoint(cfg["resume"])
        if state.model.spec != rc.model:
            raise ConfigError(f"checkpoint {cfg['resume']} holds a different model than --model {cfg['model']}")
        if cfg["fork_seed"] is not None:
            state = fork_run(state, cfg["fork_seed"], rc.model, restart_schedule=cfg["fork_restart"])
    elif cfg["fork_seed"] is not None:
        raise ConfigError("fork_seed needs a checkpoint to fork from (--resume)")

    trainer = Trainer(rc, train, test, metrics_path=out_dir / "metrics.csv", checkpoint_dir=out_dir)
    result = trainer.fit(state)
    snaps = result.snapshots
    if not snaps:
        raise ConfigError("run produced no snapshots (epochs = 0?)")
    report = build_report(snaps, test, rc.ensemble_temperature, result.state.best_test_err, result.state.best_epoch)
    summary = {
        "mode": rc.mode.value,
        "model": cfg["model"],
        "seed": seed,
        "temperature": rc.temperature,
        "epochs": rc.epochs,
        "k": rc.k,
        "per_generation_error": report.per_snapshot,
        "snapshot_iters": report.snapshot_iters,
        "final_error": report.final,
        "best_error": report.best,
        "best_epoch": report.best_epoch,
        "ensemble_error": report.ensemble,
        "top5_final_error": report.top5_final,
        "config_hash": rc.fingerprint(),
    }
    (out_dir / "summary.txt").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentOutput(out_dir, result, report, summary)


def run_experiment(config_path=None, overrides: dict[str, Any] | None = None) -> list[ExperimentOutput]:
    """Run one experiment, or a sequential seed sweep when ``seeds`` is set.

    Library twin of ``snapdistill run``; raises instead of returning an exit code.
    """
    file_values = load_config_file(config_path) if config_path else {}
    cfg = merge(file_values, overrides)
    seeds = cfg["seeds"] or [cfg["seed"]]
    base = Path(cfg["out"]) if cfg["out"] else Path("runs") / f"{cfg['mode']}-{cfg['model'].replace(':', '_')}-s{seeds[0]}"
    outputs = []
    for s in seeds:
        out_dir = base / f"seed-{s}" if len(seeds) > 1 else base
        log.info("run %s seed %d -> %s", cfg["mode"], s, out_dir)
        outputs.append(run_single(cfg, s, out_dir))
    return outputs
