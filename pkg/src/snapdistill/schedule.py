"""Mini-generation partition, teacher map, cyclic cosine rate and loss weights.

Iterations are 1-based: iteration ``l`` turns parameters ``theta_{l-1}`` into
``theta_l``. Boundaries ``L'_1 < ... < L'_{K-1}`` are cumulative iteration
counts; ``L'_0 = 0`` and ``L'_K = L`` are implied.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigError, ContractError


class Mode(str, Enum):
    BL = "bl"  # one cosine cycle, no teacher
    SE = "se"  # K cosine cycles, no teacher
    SD = "sd"  # K cosine cycles, previous cycle's last snapshot teaches

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown mode {value!r}; expected one of bl, se, sd") from None


def partition_even(total: int, k: int) -> tuple[int, ...]:
    """Interior boundaries splitting ``total`` into ``k`` near-equal segments."""
    if k < 1:
        raise ConfigError(f"need at least one mini-generation, got K={k}")
    if k > total:
        raise ConfigError(f"cannot split {total} units into {k} mini-generations")
    # round half up; python's round() would round half to even
    return tuple(math.floor(i * total / k + 0.5) for i in range(1, k))


@dataclass(frozen=True)
class ScheduleConfig:
    total_iters: int
    boundaries: tuple[int, ...] = ()
    base_rates: tuple[float, ...] = (0.1,)
    temperature: float = 1.0
    mode: Mode = Mode.BL
    lambda_s: Optional[float] = None  # None -> recipe value
    lambda_t: Optional[float] = None
    iters_per_epoch: int = 1
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        rates = tuple(float(a) for a in self.base_rates)
        if len(rates) == 1 and self.num_generations > 1:
            rates = rates * self.num_generations
        object.__setattr__(self, "base_rates", rates)
        self.validate()

    @property
    def num_generations(self) -> int:
        return len(self.boundaries) + 1

    def validate(self) -> None:
        if self.total_iters < 1:
            raise ConfigError(f"total_iters must be positive, got {self.total_iters}")
        b = (0,) + self.boundaries + (self.total_iters,)
        if any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise ConfigError(f"boundaries must be strictly increasing inside (0, {self.total_iters}): {self.boundaries}")
        if len(self.base_rates) != self.num_generations:
            raise ConfigError(f"{len(self.base_rates)} base rates for {self.num_generations} mini-generations")
        if any(a <= 0 for a in self.base_rates):
            raise ConfigError(f"base rates must be positive: {self.base_rates}")
        if self.mode is Mode.BL and self.num_generations != 1:
            raise ConfigError("BL mode uses a single mini-generation (K = 1)")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        for name in ("lambda_s", "lambda_t"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative, got {v}")

    @classmethod
    def from_epochs(
        cls,
        epochs: int,
        iters_per_epoch: int,
        k: int = 1,
        alpha: float | Sequence[float] = 0.1,
        temperature: float = 1.0,
        mode: Mode | str = Mode.BL,
        lambda_s: float | None = None,
        lambda_t: float | None = None,
    ) -> "ScheduleConfig":
        """Even K-way split at epoch granularity, scaled to iterations."""
        bounds = tuple(b * iters_per_epoch for b in partition_even(epochs, k))
        rates = (alpha,) if isinstance(alpha, (int, float)) else tuple(alpha)
        return cls(
            total_iters=epochs * iters_per_epoch,
            boundaries=bounds,
            base_rates=rates,
            temperature=temperature,
            mode=mode,
            lambda_s=lambda_s,
            lambda_t=lambda_t,
            iters_per_epoch=iters_per_epoch,
        )

    def fingerprint(self) -> str:
        d = asdict(self)
        d.pop("meta")
        d["mode"] = self.mode.value
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def _check(self, l: int) -> None:
        if not 1 <= l <= self.total_iters:
            raise ContractError(f"iteration {l} outside [1, {self.total_iters}]")

    def mini_generation(self, l: int) -> int:
        """1-based index k with L'_{k-1} < l <= L'_k."""
        self._check(l)
        return bisect.bisect_left(self.boundaries, l) + 1

    def segment(self, k: int) -> tuple[int, int]:
        b = (0,) + self.boundaries + (self.total_iters,)
        return b[k - 1], b[k]

    def teacher_index(self, l: int) -> int | None:
        self._check(l)
        return teacher_index(l, self.boundaries)

    def learning_rate(self, l: int) -> float:
        return learning_rate(l, self)

    def loss_weights(self, l: int) -> tuple[float, float]:
        return loss_weights(l, self)

    def teacher_weights(self) -> tuple[float, float]:
        """(lambda_s, lambda_t) on iterations that have a teacher.

        The 1 + 1/T factor balances the teacher's gradient; with the teacher
        switched off (lambda_t = 0) it falls back to 1.
        """
        lt = 1.0 if self.lambda_t is None else float(self.lambda_t)
        if self.lambda_s is not None:
            ls = float(self.lambda_s)
        else:
            ls = 1.0 + 1.0 / self.temperature if lt > 0 else 1.0
        return ls, lt


def teacher_index(l: int, boundaries: Sequence[int]) -> int | None:
    """Largest boundary strictly below ``l``; None (c_l = 0) if there is none."""
    if l < 1:
        raise ContractError(f"iteration must be >= 1, got {l}")
    i = bisect.bisect_left(boundaries, l)
    return boundaries[i - 1] if i > 0 else None


def learning_rate(l: int, config: ScheduleConfig) -> float:
    """Half-cosine decay from alpha_k to 0 across mini-generation k.

    Reaches exactly 0 on the last iteration of each mini-generation and
    restarts near alpha_k on the next one.
    """
    k = config.mini_generation(l)
    lo, hi = config.segment(k)
    phase = (l - lo) / (hi - lo)
    return 0.5 * config.base_rates[k - 1] * (1.0 + math.cos(phase * math.pi))


def loss_weights(l: int, config: ScheduleConfig) -> tuple[float, float]:
    if config.mode is not Mode.SD or config.teacher_index(l) is None:
        return 1.0, 0.0
    return config.teacher_weights()
