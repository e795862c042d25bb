"""Top-k error, snapshot ensembles, and the per-run report."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import softmax_with_temperature
from .data import Dataset
from .errors import ConfigError, ContractError
from .models import Model
from .snapshots import Snapshot


def predict_logits(target: Model | Snapshot, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Eval-mode logits, computed in fixed-size chunks."""
    model = target.to_model() if isinstance(target, Snapshot) else target
    outs = [model.forward(inputs[i : i + batch_size], "eval").data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs, axis=0)


def topk_error(logits: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Percent of rows whose label is not among the k largest logits.

    Ties are broken in favor of the lower class index.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ContractError("cannot score an empty split")
    true = logits[np.arange(len(labels)), labels][:, None]
    cls = np.arange(logits.shape[1])[None, :]
    rank = (logits > true).sum(axis=1) + ((logits == true) & (cls < labels[:, None])).sum(axis=1)
    return 100.0 * float(np.mean(rank >= k))


@dataclass(frozen=True)
class EvalResult:
    top1: float
    top5: float | None = None


def evaluate(target: Model | Snapshot, dataset: Dataset, batch_size: int = 512) -> EvalResult:
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty split")
    logits = predict_logits(target, dataset.images, batch_size)
    top5 = topk_error(logits, dataset.labels, 5) if dataset.num_classes > 5 else None
    return EvalResult(topk_error(logits, dataset.labels, 1), top5)


def ensemble_predict(snapshots: Sequence[Snapshot], x: np.ndarray, temperature: float = 1.0,
                     batch_size: int = 512) -> np.ndarray:
    """Uniform average of per-snapshot softmax outputs.

    Snapshot k (1-based, in order) has its logits multiplied by
    ``temperature ** (k - 1)`` first; temperature 1 is plain averaging.
    """
    if len(snapshots) < 2:
        raise ContractError(f"an ensemble needs at least 2 snapshots, got {len(snapshots)}")
    specs = {s.spec for s in snapshots}
    if len(specs) > 1:
        raise ConfigError("ensemble members have different model specs")
    probs = None
    for k, snap in enumerate(snapshots):
        z = predict_logits(snap, x, batch_size).astype(np.float64)
        p = softmax_with_temperature(z * float(temperature) ** k).data
        probs = p if probs is None else probs + p
    return probs / len(snapshots)


def ensemble_error(snapshots: Sequence[Snapshot], dataset: Dataset, temperature: float = 1.0) -> float:
    return topk_error(ensemble_predict(snapshots, dataset.images, temperature), dataset.labels, 1)


@dataclass
class EvalReport:
    per_snapshot: list[float]
    snapshot_iters: list[int]
    final: float
    best: float | None
    best_epoch: int | None
    ensemble: float | None = None
    top5_final: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in [*self.per_snapshot, self.final, self.best, self.ensemble, self.top5_final]:
            if v is not None and not 0.0 <= v <= 100.0:
                raise ContractError(f"error rate {v} outside [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(snapshots: Sequence[Snapshot], test: Dataset, ensemble_temperature: float,
                 best: float | None = None, best_epoch: int | None = None) -> EvalReport:
    per = [evaluate(s, test).top1 for s in snapshots]
    final_eval = evaluate(snapshots[-1], test)
    ens = ensemble_error(snapshots, test, ensemble_temperature) if len(snapshots) >= 2 else None
    return EvalReport(
        per_snapshot=per,
        snapshot_iters=[s.iteration for s in snapshots],
        final=final_eval.top1,
        best=best,
        best_epoch=best_epoch,
        ensemble=ens,
        top5_final=final_eval.top5,
    )
