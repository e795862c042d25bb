"""SGD with Nesterov momentum and L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError, NumericError


def is_bn_param(name: str) -> bool:
    return name.endswith(".gamma") or name.endswith(".beta")


@dataclass
class OptimizerState:
    """Momentum buffers keyed by parameter name, plus the coefficients."""

    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_bn: bool = True
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")

    @classmethod
    def for_params(cls, params: Mapping[str, "object"], **kw) -> "OptimizerState":
        state = cls(**kw)
        for name, p in params.items():
            data = getattr(p, "data", p)
            state.buffers[name] = np.zeros_like(data)
        return state


def sgd_step(params: Mapping, grads: Mapping[str, np.ndarray], state: OptimizerState, lr: float) -> None:
    """One in-place Nesterov step over every parameter in ``params``.

    g = grad + wd * theta;  v = mu * v + g;  theta -= lr * (g + mu * v)

    ``params`` maps names to Tensors (or raw arrays); running batch-norm
    statistics are not parameters and must not be passed here.
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    mu, wd = state.momentum, state.weight_decay
    for name, p in params.items():
        theta = getattr(p, "data", p)
        g = grads[name]
        if g.shape != theta.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", op=name)
        if wd and (state.decay_bn or not is_bn_param(name)):
            g = g + wd * theta
        v = state.buffers.get(name)
        if v is None:
            v = state.buffers[name] = np.zeros_like(theta)
        if mu:
            v *= mu
            v += g
            step = g + mu * v
        else:
            v[...] = g
            step = g
        theta -= lr * step
