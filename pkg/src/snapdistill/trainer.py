"""The training loop: baseline (BL), snapshot ensemble (SE), snapshot distillation (SD)."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import grad
from .data import Dataset, augment, batches_per_epoch, epoch_batches
from .errors import ConfigError, NumericError
from .evaluation import evaluate
from .losses import LossBreakdown, sd_loss
from .models import Model, ModelSpec, build_model
from .optim import OptimizerState, sgd_step
from .schedule import Mode, ScheduleConfig
from .snapshots import (
    Snapshot,
    Teacher,
    TrainState,
    checkpoint_path,
    register_teacher,
    save_checkpoint,
    training_rng,
)

log = logging.getLogger(__name__)

METRICS_FIELDS = (
    "epoch", "iter", "mode", "mini_gen", "lr", "lambda_s", "lambda_t",
    "loss_total", "loss_ce", "loss_kl", "train_err", "test_err", "teacher_iter",
)


@dataclass
class RunConfig:
    model: ModelSpec
    mode: Mode = Mode.SD
    epochs: int = 20
    batch_size: int = 128
    k: int = 4
    temperature: float = 2.0
    alpha: float = 0.1
    lambda_s: Optional[float] = None
    lambda_t: Optional[float] = None
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_bn: bool = True
    seed: int = 0
    augment: bool = True
    padding_mode: str = "constant"
    dtype: str = "float32"
    dataset: str = "synth"

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.validate()

    def validate(self) -> None:
        self.model.validate()
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if self.mode is Mode.BL and self.k != 1:
            raise ConfigError(f"BL mode trains a single cosine cycle; got k={self.k}")
        if self.mode is Mode.SD and self.k < 2:
            raise ConfigError("SD needs at least 2 mini-generations (k >= 2)")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.epochs and self.k > self.epochs:
            raise ConfigError(f"cannot split {self.epochs} epochs into {self.k} mini-generations")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        # constructing these validates the coefficients
        OptimizerState(self.momentum, self.weight_decay)

    def schedule(self, iters_per_epoch: int) -> ScheduleConfig:
        return ScheduleConfig.from_epochs(
            self.epochs, iters_per_epoch, k=self.k, alpha=self.alpha, temperature=self.temperature,
            mode=self.mode, lambda_s=self.lambda_s, lambda_t=self.lambda_t,
        )

    @property
    def ensemble_temperature(self) -> float:
        # logit scaling offsets teacher-sharpened snapshots; without a teacher it is plain averaging
        distilled = self.mode is Mode.SD and (self.lambda_t is None or self.lambda_t > 0)
        return self.temperature if distilled else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MetricsRecord:
    epoch: int
    iter: int
    mode: str
    mini_gen: int
    lr: float
    lambda_s: float
    lambda_t: float
    loss_total: float
    loss_ce: float
    loss_kl: float
    train_err: float
    test_err: float | None
    teacher_iter: int

    def csv_row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(format(v, ".9g"))
            else:
                out.append(str(v))
        return out


class MetricsWriter:
    """Appends one CSV row per epoch; writes the header for a new file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_FIELDS)

    def __call__(self, rec: MetricsRecord) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(rec.csv_row())


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@dataclass
class TrainResult:
    state: TrainState
    snapshots: list[Snapshot]
    metrics: list[MetricsRecord] = field(default_factory=list)

    @property
    def model(self) -> Model:
        return self.state.model

    @property
    def final_test_err(self) -> float | None:
        return self.metrics[-1].test_err if self.metrics else None


class Trainer:
    """Runs one configuration over a training split.

    ``external_teacher`` turns the loop into classic two-model distillation: the
    given teacher supervises every iteration with the constant weights
    ``schedule.teacher_weights()``, regardless of mode.
    """

    def __init__(
        self,
        config: RunConfig,
        train_set: Dataset,
        test_set: Dataset | None = None,
        external_teacher: Teacher | None = None,
        metrics_path=None,
        checkpoint_dir=None,
        on_epoch: Callable[[MetricsRecord, TrainState], None] | None = None,
    ):
        self.config = config
        self.train_set = train_set
        self.test_set = test_set
        self.external_teacher = external_teacher
        self.iters_per_epoch = batches_per_epoch(len(train_set), config.batch_size)
        self.schedule = config.schedule(self.iters_per_epoch) if config.epochs else None
        self.writer = MetricsWriter(metrics_path) if metrics_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.on_epoch = on_epoch
        self._dtype = np.dtype(config.dtype)

    # ------------------------------------------------------------ state

    def init_state(self) -> TrainState:
        cfg = self.config
        model = build_model(cfg.model, cfg.seed, dtype=self._dtype)
        opt = OptimizerState.for_params(
            model.params, momentum=cfg.momentum, weight_decay=cfg.weight_decay, decay_bn=cfg.decay_bn
        )
        return TrainState(
            model=model,
            optimizer=opt,
            rng=training_rng(cfg.seed),
            seed=cfg.seed,
            data_seed=cfg.seed,
            mode=cfg.mode.value,
            config_hash=cfg.fingerprint(),
        )

    # ------------------------------------------------------------ one iteration

    def _weights_and_teacher(self, state: TrainState, l: int) -> tuple[tuple[float, float], Teacher | None]:
        if self.external_teacher is not None:
            w = self.schedule.teacher_weights()
            return w, self.external_teacher if w[1] > 0 else None
        w = self.schedule.loss_weights(l)
        if w[1] == 0:
            return w, None
        expected = self.schedule.teacher_index(l)
        if state.teacher is None or state.teacher.iteration != expected:
            raise RuntimeError(f"iteration {l} expects teacher {expected}, have {state.teacher}")
        return w, state.teacher

    def _step(self, state: TrainState, x: np.ndarray, y: np.ndarray):
        sched = self.schedule
        l = state.iteration + 1
        lr = sched.learning_rate(l)
        weights, teacher = self._weights_and_teacher(state, l)
        model = state.model
        logits = model.forward(x.astype(self._dtype, copy=False), "train")
        # same augmented views for teacher and student
        t_logits = teacher(x.astype(self._dtype, copy=False)) if teacher is not None else None
        try:
            total, br = sd_loss(logits, y, t_logits, weights, self.config.temperature)
            names = list(model.params)
            g = grad(total, [model.params[n] for n in names])
            sgd_step(model.params, dict(zip(names, g)), state.optimizer, lr)
        except NumericError as e:
            record = {"iteration": l, "lr": lr, "weights": weights}
            if "br" in locals():
                record.update(loss_total=br.total, loss_ce=br.ce_term, loss_kl=br.kl_term)
            raise NumericError(f"training diverged at iteration {l}: {e}", node_id=e.node_id,
                               op=e.op, record=record) from e
        state.iteration = l
        self._maybe_snapshot(state)
        return br, logits.data, lr, weights

    def train_step(self, state: TrainState, x: np.ndarray, y: np.ndarray) -> LossBreakdown:
        """Advance ``state`` by one iteration on the (already augmented) batch."""
        return self._step(state, x, y)[0]

    def _maybe_snapshot(self, state: TrainState) -> None:
        sched, l = self.schedule, state.iteration
        if l not in sched.boundaries and l != sched.total_iters:
            return
        snap = Snapshot.capture(
            state.model,
            iteration=l,
            epoch=-(-l // self.iters_per_epoch),
            mode=self.config.mode.value,
            seed=state.seed,
            config_hash=state.config_hash,
        )
        state.snapshots.append(snap)
        if self.config.mode is Mode.SD and l < sched.total_iters:
            state.teacher = register_teacher(snap)

    # ------------------------------------------------------------ epochs

    def run_epoch(self, state: TrainState) -> MetricsRecord:
        cfg, data = self.config, self.train_set
        n = len(data)
        sums = np.zeros(3)
        wrong = 0
        use_aug = cfg.augment and data.is_image
        for idx in epoch_batches(n, cfg.batch_size, state.rng):
            x = data.images[idx]
            if use_aug:
                x = augment(x, state.rng, padding_mode=cfg.padding_mode)
            y = data.labels[idx]
            br, logits, lr, weights = self._step(state, x, y)
            sums += len(idx) * np.array([br.total, br.ce_term, br.kl_term])
            wrong += int(np.sum(logits.argmax(axis=1) != y))
        state.epoch += 1

        test_err = None
        if self.test_set is not None:
            test_err = evaluate(state.model, self.test_set).top1
            if state.best_test_err is None or test_err < state.best_test_err:
                state.best_test_err, state.best_epoch = test_err, state.epoch
        l = state.iteration
        teacher_iter = self._teacher_iter(l)
        return MetricsRecord(
            epoch=state.epoch,
            iter=l,
            mode=cfg.mode.value,
            mini_gen=self.schedule.mini_generation(l),
            lr=lr,
            lambda_s=weights[0],
            lambda_t=weights[1],
            loss_total=sums[0] / n,
            loss_ce=sums[1] / n,
            loss_kl=sums[2] / n,
            train_err=100.0 * wrong / n,
            test_err=test_err,
            teacher_iter=teacher_iter,
        )

    def _teacher_iter(self, l: int) -> int:
        """Iteration of the teacher that supervised iteration ``l``; 0 if none was consulted."""
        if self.external_teacher is not None:
            return self.external_teacher.iteration if self.schedule.teacher_weights()[1] > 0 else 0
        if self.schedule.loss_weights(l)[1] == 0:
            return 0
        return self.schedule.teacher_index(l) or 0

    def fit(self, state: TrainState | None = None, stop_epoch: int | None = None) -> TrainResult:
        """Train from ``state`` (fresh if None) up to ``stop_epoch`` or the end."""
        state = state or self.init_state()
        end = self.config.epochs if stop_epoch is None else min(stop_epoch, self.config.epochs)
        metrics = []
        while state.epoch < end:
            rec = self.run_epoch(state)
            if not math.isfinite(rec.loss_total):
                raise NumericError(f"non-finite epoch loss at epoch {rec.epoch}", record=asdict(rec))
            metrics.append(rec)
            if self.writer:
                self.writer(rec)
            log.info(
                "epoch %d iter %d lr %.4g loss %.4f (ce %.4f kl %.4f) train %.2f%% test %s",
                rec.epoch, rec.iter, rec.lr, rec.loss_total, rec.loss_ce, rec.loss_kl, rec.train_err,
                "-" if rec.test_err is None else f"{rec.test_err:.2f}%",
            )
            if self.checkpoint_dir and self._at_boundary(state):
                save_checkpoint(state, checkpoint_path(self.checkpoint_dir, state.iteration))
            if self.on_epoch:
                self.on_epoch(rec, state)
        return TrainResult(state, list(state.snapshots), metrics)

    def _at_boundary(self, state: TrainState) -> bool:
        s = self.schedule
        return state.iteration in s.boundaries or state.iteration == s.total_iters


def train(config: RunConfig, train_set: Dataset, test_set: Dataset | None = None, **kwargs) -> TrainResult:
    return Trainer(config, train_set, test_set, **kwargs).fit()
