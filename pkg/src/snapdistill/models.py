"""MLP and CIFAR-style ResNet builders on top of the autodiff core."""

from __future__ import annotations

import hashlib
import re
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "mlp" or "resnet"
    num_classes: int
    widths: tuple[int, ...] = ()  # mlp: input, hidden..., output
    depth: int = 20  # resnet total depth A
    channels: tuple[int, int, int] = (16, 32, 64)
    in_channels: int = 3
    image_size: int = 32
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.kind == "mlp":
            if len(self.widths) < 2 or any(w < 1 for w in self.widths):
                raise ConfigError(f"mlp needs >= 2 positive widths, got {self.widths}")
            if self.widths[-1] != self.num_classes:
                raise ConfigError(f"mlp output width {self.widths[-1]} != num_classes {self.num_classes}")
        elif self.kind == "resnet":
            if self.depth < 8 or (self.depth - 2) % 6:
                raise ConfigError(f"resnet depth must satisfy A = 6n + 2 with n >= 1, got {self.depth}")
            if len(self.channels) != 3:
                raise ConfigError("resnet needs a 3-stage channel plan")
            if self.image_size % 4:
                raise ConfigError(f"image size must be divisible by 4, got {self.image_size}")
        else:
            raise ConfigError(f"unknown model kind {self.kind!r}")

    @property
    def blocks_per_stage(self) -> int:
        return (self.depth - 2) // 6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    @classmethod
    def from_name(cls, name: str, num_classes: int, input_dim: int | None = None,
                  in_channels: int = 3, image_size: int = 32) -> "ModelSpec":
        """Parse ``mlp``, ``mlp:64,32`` or ``resnet<A>``."""
        m = re.fullmatch(r"resnet(\d+)", name)
        if m:
            return cls("resnet", num_classes, depth=int(m.group(1)),
                       in_channels=in_channels, image_size=image_size)
        m = re.fullmatch(r"mlp(?::([\d,]+))?", name)
        if m:
            if input_dim is None:
                raise ConfigError("mlp needs the input dimension")
            hidden = tuple(int(w) for w in m.group(1).split(",")) if m.group(1) else (64,)
            return cls("mlp", num_classes, widths=(input_dim, *hidden, num_classes))
        raise ConfigError(f"unknown model name {name!r}")


class Model:
    """Parameters, batch-norm buffers and the forward function of one network.

    ``params`` holds the optimized tensors, ``buffers`` the running
    statistics. Both are ordered dicts with a fixed, deterministic order.
    """

    def __init__(self, spec: ModelSpec, params: dict[str, Tensor], buffers: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params
        self.buffers = buffers
        self._forward: Callable = _resnet_forward if spec.kind == "resnet" else _mlp_forward

    def forward(self, x, mode: str = "train") -> Tensor:
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = ad.as_tensor(x)
        return self._forward(self, x, mode == "train")

    __call__ = forward

    def arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as one name -> array map (live references)."""
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            _copy_into(p.data, arrays[name], name)
        for name, b in self.buffers.items():
            _copy_into(b, arrays[name], name)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def checksum(self) -> str:
        return checksum_arrays(self.arrays())

    def clone(self, frozen: bool = False) -> "Model":
        params = {
            n: Tensor(p.data.copy(), requires_grad=not frozen and p.requires_grad, name=n)
            for n, p in self.params.items()
        }
        buffers = {n: b.copy() for n, b in self.buffers.items()}
        if frozen:
            for t in params.values():
                t.data.setflags(write=False)
            for b in buffers.values():
                b.setflags(write=False)
        return Model(self.spec, params, buffers)


def _copy_into(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != src.shape:
        raise ContractError(f"{name}: shape {src.shape} does not fit {dst.shape}")
    dst[...] = src


def checksum_arrays(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- construction


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class _Builder:
    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def param(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(arr, requires_grad=True, name=name)

    def conv(self, name: str, cin: int, cout: int, k: int) -> None:
        self.param(name, _he(self.rng, (cout, cin, k, k), cin * k * k, self.dtype))

    def bn(self, name: str, c: int) -> None:
        self.param(f"{name}.gamma", np.ones(c, self.dtype))
        self.param(f"{name}.beta", np.zeros(c, self.dtype))
        self.buffers[f"{name}.running_mean"] = np.zeros(c, self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(c, self.dtype)

    def fc(self, name: str, fan_in: int, fan_out: int) -> None:
        self.param(f"{name}.weight", _he(self.rng, (fan_in, fan_out), fan_in, self.dtype))
        self.param(f"{name}.bias", np.zeros(fan_out, self.dtype))


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Deterministic He fan-in initialization; same (spec, seed, dtype) gives identical bits."""
    spec.validate()
    b = _Builder(seed, dtype)
    if spec.kind == "mlp":
        for i, (fi, fo) in enumerate(zip(spec.widths, spec.widths[1:])):
            b.fc(f"fc{i}", fi, fo)
    else:
        c1 = spec.channels[0]
        b.conv("stem.conv", spec.in_channels, c1, 3)
        b.bn("stem.bn", c1)
        cin = c1
        for s, c in enumerate(spec.channels):
            for j in range(spec.blocks_per_stage):
                pre = f"stage{s}.block{j}"
                b.conv(f"{pre}.conv1", cin, c, 3)
                b.bn(f"{pre}.bn1", c)
                b.conv(f"{pre}.conv2", c, c, 3)
                b.bn(f"{pre}.bn2", c)
                if cin != c:
                    b.conv(f"{pre}.shortcut", cin, c, 1)
                cin = c
        b.fc("fc", cin, spec.num_classes)
    return Model(spec, b.params, b.buffers)


# ---------------------------------------------------------------- forward passes


def _mlp_forward(model: Model, x: Tensor, training: bool) -> Tensor:
    spec, p = model.spec, model.params
    if x.ndim != 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != spec.widths[0]:
        raise ContractError(f"mlp expects input width {spec.widths[0]}, got {x.shape[1]}")
    h = x
    n = len(spec.widths) - 1
    for i in range(n):
        h = ad.linear(h, p[f"fc{i}.weight"], p[f"fc{i}.bias"])
        if i < n - 1:
            h = ad.relu(h)
    return h


def _bn(model: Model, name: str, h: Tensor, training: bool) -> Tensor:
    p, bufs = model.params, model.buffers
    return ad.batch_norm(
        h,
        p[f"{name}.gamma"],
        p[f"{name}.beta"],
        bufs[f"{name}.running_mean"],
        bufs[f"{name}.running_var"],
        training,
        momentum=model.spec.bn_momentum,
    )


def residual_block(model: Model, prefix: str, h: Tensor, training: bool) -> Tensor:
    """conv-BN-ReLU-conv-BN plus shortcut, then ReLU."""
    p = model.params
    out = ad.relu(_bn(model, f"{prefix}.bn1", ad.conv2d(h, p[f"{prefix}.conv1"], 1, 1), training))
    out = _bn(model, f"{prefix}.bn2", ad.conv2d(out, p[f"{prefix}.conv2"], 1, 1), training)
    sc_name = f"{prefix}.shortcut"
    shortcut = ad.conv2d(h, p[sc_name], 1, 0) if sc_name in p else h
    return ad.relu(out + shortcut)


def _resnet_forward(model: Model, x: Tensor, training: bool) -> Tensor:
    spec, p = model.spec, model.params
    expected = (spec.in_channels, spec.image_size, spec.image_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ContractError(f"resnet expects input [N, {expected}], got {x.shape}")
    h = ad.relu(_bn(model, "stem.bn", ad.conv2d(x, p["stem.conv"], 1, 1), training))
    for s in range(3):
        if s > 0:
            h = ad.avg_pool2d(h, 2)
        for j in range(spec.blocks_per_stage):
            h = residual_block(model, f"stage{s}.block{j}", h, training)
    h = ad.global_avg_pool(h)
    return ad.linear(h, p["fc.weight"], p["fc.bias"])
