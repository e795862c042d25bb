"""Frozen snapshots, teacher handles, and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    magic        8 bytes  b"SNAPDSTL"
    version      u32
    descriptor   u32 length + UTF-8 JSON (model spec, run metadata)
    model        tensor section (parameters, then batch-norm buffers)
    optimizer    tensor section (momentum buffers)
    rng          u32 length + UTF-8 JSON (numpy bit-generator state, or null)
    snapshots    u32 count, then per snapshot: u32 length + JSON meta, tensor section
    crc32        u32 over every preceding byte

A tensor section is a u32 count followed by records of::

    u16 name length, name (UTF-8), u8 dtype code (0 = f32, 1 = f64),
    u8 ndim, ndim x u32 dims, raw IEEE-754 little-endian values
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import ConfigError, FormatError, VersionError
from .models import Model, ModelSpec, build_model, checksum_arrays
from .optim import OptimizerState

MAGIC = b"SNAPDSTL"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


# ---------------------------------------------------------------- snapshots


@dataclass(frozen=True)
class Snapshot:
    """Read-only copy of a model's parameters and running statistics."""

    spec: ModelSpec
    arrays: Mapping[str, np.ndarray]
    meta: Mapping = field(default_factory=dict)

    @classmethod
    def capture(cls, model: Model, **meta) -> "Snapshot":
        arrays = {}
        for name, arr in model.arrays().items():
            a = arr.copy()
            a.setflags(write=False)
            arrays[name] = a
        meta.setdefault("format_version", FORMAT_VERSION)
        return cls(model.spec, MappingProxyType(arrays), MappingProxyType(dict(meta)))

    @property
    def iteration(self) -> int:
        return int(self.meta.get("iteration", 0))

    def checksum(self) -> str:
        return checksum_arrays(dict(self.arrays))

    def to_model(self) -> Model:
        """A frozen model: no gradients, read-only arrays, eval use only."""
        model = build_model(self.spec, 0, dtype=next(iter(self.arrays.values())).dtype)
        params = {n: type(p)(self.arrays[n], requires_grad=False, name=n) for n, p in model.params.items()}
        buffers = {n: self.arrays[n] for n in model.buffers}
        return Model(self.spec, params, buffers)

    def forward(self, x) -> np.ndarray:
        return self.to_model().forward(x, "eval").data


class Teacher:
    """Eval-mode forward closure over a frozen snapshot."""

    def __init__(self, snapshot: Snapshot):
        self.snapshot = snapshot
        self._model = snapshot.to_model()

    @property
    def iteration(self) -> int:
        return self.snapshot.iteration

    def __call__(self, x) -> np.ndarray:
        return self._model.forward(x, "eval").data

    def __repr__(self) -> str:
        return f"Teacher(iteration={self.iteration})"


def register_teacher(snapshot: Snapshot) -> Teacher:
    return Teacher(snapshot)


# ---------------------------------------------------------------- low-level encoding


def _write_tensors(buf: io.BytesIO, tensors: Mapping[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ConfigError(f"cannot serialize {name} with dtype {arr.dtype}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _write_json(buf: io.BytesIO, obj) -> None:
    b = json.dumps(obj, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: unexpected end of file at byte offset {self.pos} (wanted {n} bytes)",
                offset=self.pos,
                path=str(self.path),
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (n,) = self.unpack("<I")
        raw = self.take(n)
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{self.path}: bad JSON block ending at offset {self.pos}: {e}",
                              offset=self.pos, path=str(self.path)) from None

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<H")
            name = self.take(nlen).decode("utf-8")
            code, ndim = self.unpack("<BB")
            if code not in _DTYPES:
                raise FormatError(f"{self.path}: unknown dtype code {code} at offset {self.pos}",
                                  offset=self.pos, path=str(self.path))
            shape = self.unpack(f"<{ndim}I")
            dt = _DTYPES[code]
            n = int(np.prod(shape)) * dt.itemsize
            arr = np.frombuffer(self.take(n), dtype=dt).reshape(shape)
            out[name] = arr.astype(dt.newbyteorder("="), copy=True)
        return out


# ---------------------------------------------------------------- files


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(
    spec: ModelSpec,
    model_arrays: Mapping[str, np.ndarray],
    meta: dict,
    optimizer: Mapping[str, np.ndarray] | None = None,
    rng_state: dict | None = None,
    snapshots: list[Snapshot] = (),
) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _write_json(buf, {"model_spec": spec.to_dict(), "meta": meta})
    _write_tensors(buf, model_arrays)
    _write_tensors(buf, optimizer or {})
    _write_json(buf, rng_state)
    buf.write(struct.pack("<I", len(snapshots)))
    for snap in snapshots:
        _write_json(buf, {"model_spec": snap.spec.to_dict(), "meta": dict(snap.meta)})
        _write_tensors(buf, snap.arrays)
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload))


@dataclass
class CheckpointData:
    spec: ModelSpec
    meta: dict
    model_arrays: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    rng_state: dict | None
    snapshots: list[Snapshot]


def decode_checkpoint(data: bytes, path="<bytes>") -> CheckpointData:
    r = _Reader(data, path)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}", offset=0, path=str(path))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}",
                           offset=len(MAGIC), path=str(path))
    if len(data) < r.pos + 4:
        raise FormatError(f"{path}: file too short", offset=len(data), path=str(path))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: checksum mismatch, file is corrupted", path=str(path))
    r.data = body
    head = r.json()
    spec = ModelSpec.from_dict(head["model_spec"])
    model_arrays = r.tensors()
    optimizer = r.tensors()
    rng_state = r.json()
    (nsnap,) = r.unpack("<I")
    snaps = []
    for _ in range(nsnap):
        shead = r.json()
        arrays = r.tensors()
        for a in arrays.values():
            a.setflags(write=False)
        snaps.append(Snapshot(ModelSpec.from_dict(shead["model_spec"]), MappingProxyType(arrays),
                              MappingProxyType(shead["meta"])))
    if r.pos != len(body):
        raise FormatError(f"{path}: {len(body) - r.pos} trailing bytes at offset {r.pos}",
                          offset=r.pos, path=str(path))
    return CheckpointData(spec, head["meta"], model_arrays, optimizer, rng_state, snaps)


def read_checkpoint(path) -> CheckpointData:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return decode_checkpoint(data, path)


def save_snapshot(snapshot: Snapshot, path) -> Path:
    path = Path(path)
    payload = encode_checkpoint(snapshot.spec, snapshot.arrays, dict(snapshot.meta))
    _atomic_write(path, payload)
    return path


def load_snapshot(path) -> Snapshot:
    ck = read_checkpoint(path)
    arrays = dict(ck.model_arrays)
    for a in arrays.values():
        a.setflags(write=False)
    return Snapshot(ck.spec, MappingProxyType(arrays), MappingProxyType(ck.meta))


def checkpoint_path(run_dir, iteration: int) -> Path:
    return Path(run_dir) / f"ckpt-{iteration}.bin"


def restore_model(ck: CheckpointData) -> Model:
    dtype = next(iter(ck.model_arrays.values())).dtype
    model = build_model(ck.spec, 0, dtype=dtype)
    model.load_arrays(ck.model_arrays)
    return model


def restore_optimizer(ck: CheckpointData) -> OptimizerState:
    opt = ck.meta.get("optimizer", {})
    return OptimizerState(
        momentum=opt.get("momentum", 0.9),
        weight_decay=opt.get("weight_decay", 1e-4),
        decay_bn=opt.get("decay_bn", True),
        buffers={k: v.copy() for k, v in ck.optimizer.items()},
    )


# ---------------------------------------------------------------- training state


def training_rng(seed: int) -> np.random.Generator:
    """Stream for batch order and augmentation; independent of the init stream."""
    return np.random.default_rng([seed, 7])


@dataclass
class TrainState:
    model: Model
    optimizer: OptimizerState
    rng: np.random.Generator
    iteration: int = 0
    epoch: int = 0
    seed: int = 0  # initialization seed
    data_seed: int = 0  # seed of the current batch/augmentation stream
    mode: str = "bl"
    config_hash: str = ""
    teacher: Teacher | None = None
    snapshots: list[Snapshot] = field(default_factory=list)
    best_test_err: float | None = None
    best_epoch: int | None = None

    @property
    def teacher_iter(self) -> int | None:
        return self.teacher.iteration if self.teacher is not None else None


def save_checkpoint(state: TrainState, path) -> Path:
    """Write ``state`` atomically; a reload reproduces it bit for bit."""
    path = Path(path)
    opt = state.optimizer
    meta = {
        "iteration": state.iteration,
        "epoch": state.epoch,
        "seed": state.seed,
        "data_seed": state.data_seed,
        "mode": state.mode,
        "config_hash": state.config_hash,
        "teacher_iter": state.teacher_iter,
        "best_test_err": state.best_test_err,
        "best_epoch": state.best_epoch,
        "optimizer": {"momentum": opt.momentum, "weight_decay": opt.weight_decay, "decay_bn": opt.decay_bn},
        "format_version": FORMAT_VERSION,
    }
    payload = encode_checkpoint(
        state.model.spec,
        state.model.arrays(),
        meta,
        optimizer=opt.buffers,
        rng_state=state.rng.bit_generator.state,
        snapshots=state.snapshots,
    )
    try:
        _atomic_write(path, payload)
    except OSError as e:
        raise OSError(f"cannot write checkpoint {path}: {e.strerror}") from e
    return path


def _restore_rng(state_dict: dict) -> np.random.Generator:
    name = state_dict["bit_generator"]
    bg = getattr(np.random, name)()
    bg.state = state_dict
    return np.random.Generator(bg)


def load_checkpoint(path) -> TrainState:
    ck = read_checkpoint(path)  # fully parsed before any state is built
    m = ck.meta
    teacher = None
    if m.get("teacher_iter") is not None:
        match = [s for s in ck.snapshots if s.iteration == m["teacher_iter"]]
        if not match:
            raise FormatError(f"{path}: teacher snapshot {m['teacher_iter']} missing", path=str(path))
        teacher = register_teacher(match[-1])
    return TrainState(
        model=restore_model(ck),
        optimizer=restore_optimizer(ck),
        rng=_restore_rng(ck.rng_state),
        iteration=m["iteration"],
        epoch=m["epoch"],
        seed=m["seed"],
        data_seed=m["data_seed"],
        mode=m["mode"],
        config_hash=m.get("config_hash", ""),
        teacher=teacher,
        snapshots=list(ck.snapshots),
        best_test_err=m.get("best_test_err"),
        best_epoch=m.get("best_epoch"),
    )


def fork_run(checkpoint, new_seed: int, model_spec: ModelSpec | None = None,
             restart_schedule: bool = False) -> TrainState:
    """Continue from a checkpoint's parameters with a fresh randomization stream.

    By default the fork keeps the schedule position (iteration, epoch, teacher)
    of the checkpoint. With ``restart_schedule`` it starts over at iteration 0
    with no teacher and no snapshots, keeping parameters and momentum.
    """
    state = checkpoint if isinstance(checkpoint, TrainState) else load_checkpoint(checkpoint)
    if model_spec is not None and model_spec != state.model.spec:
        raise ConfigError(f"fork model spec {model_spec} does not match checkpoint spec {state.model.spec}")
    state = TrainState(
        model=state.model.clone(),
        optimizer=OptimizerState(
            state.optimizer.momentum,
            state.optimizer.weight_decay,
            state.optimizer.decay_bn,
            {k: v.copy() for k, v in state.optimizer.buffers.items()},
        ),
        rng=training_rng(new_seed),
        iteration=state.iteration,
        epoch=state.epoch,
        seed=state.seed,
        data_seed=new_seed,
        mode=state.mode,
        config_hash=state.config_hash,
        teacher=state.teacher,
        snapshots=list(state.snapshots),
        best_test_err=state.best_test_err,
        best_epoch=state.best_epoch,
    )
    if restart_schedule:
        state.iteration = state.epoch = 0
        state.teacher = None
        state.snapshots = []
        state.best_test_err = state.best_epoch = None
    return state
