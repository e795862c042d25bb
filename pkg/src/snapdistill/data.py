"""Datasets, mini-batch order and train-time augmentation.

Binary image files use the CIFAR record layout: each record is
``label_bytes`` label bytes followed by ``channels * height * width`` pixel
bytes in channel-major (C, H, W) order. With two label bytes (CIFAR-100:
coarse, fine) the byte at ``label_index`` is used.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, FormatError


@dataclass(frozen=True)
class ImageFormat:
    channels: int = 3
    height: int = 32
    width: int = 32
    num_classes: int = 10
    label_bytes: int = 1
    label_index: int = -1

    @property
    def record_size(self) -> int:
        return self.label_bytes + self.channels * self.height * self.width


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] or [N, D]
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str = "train"
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ContractError(f"{len(self.images)} inputs but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_image(self) -> bool:
        return self.images.ndim == 4

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.images.shape[1:]


# ---------------------------------------------------------------- binary images


def write_small_images(path, images: np.ndarray, labels: np.ndarray, fmt: ImageFormat) -> None:
    """Write uint8 images [N, C, H, W] and labels in the record layout."""
    images = np.asarray(images, dtype=np.uint8)
    n = len(images)
    rec = np.zeros((n, fmt.record_size), dtype=np.uint8)
    li = fmt.label_index % fmt.label_bytes
    rec[:, li] = np.asarray(labels, dtype=np.uint8)
    rec[:, fmt.label_bytes :] = images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def load_small_images(
    path,
    fmt: ImageFormat,
    split: str = "train",
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Dataset:
    """Read a record file and normalize each channel to zero mean, unit variance.

    Statistics come from this file when ``stats`` is None (the training split)
    and must be passed in, taken from the training split, for any other split.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % fmt.record_size:
        n_full = raw.size // fmt.record_size
        raise FormatError(
            f"{path}: truncated record at byte offset {n_full * fmt.record_size} "
            f"(file size {raw.size}, record size {fmt.record_size})",
            offset=n_full * fmt.record_size,
            path=str(path),
        )
    recs = raw.reshape(-1, fmt.record_size)
    labels = recs[:, fmt.label_index % fmt.label_bytes].astype(np.int64)
    bad = np.flatnonzero(labels >= fmt.num_classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{path}: label {labels[i]} >= {fmt.num_classes} in record {i}",
            offset=i * fmt.record_size,
            path=str(path),
        )
    images = recs[:, fmt.label_bytes :].reshape(-1, fmt.channels, fmt.height, fmt.width).astype(np.float64)
    if stats is None:
        if split != "train":
            raise ContractError("normalization statistics must come from the training split")
        mean = images.mean(axis=(0, 2, 3))
        std = images.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    images = (images - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(
        images.astype(np.float32),
        labels,
        fmt.num_classes,
        split=split,
        channel_mean=mean,
        channel_std=std,
        meta={"source": str(path)},
    )


def load_split_pair(train_path, test_path, fmt: ImageFormat) -> tuple[Dataset, Dataset]:
    train = load_small_images(train_path, fmt, "train")
    test = load_small_images(test_path, fmt, "test", stats=(train.channel_mean, train.channel_std))
    return train, test


# ---------------------------------------------------------------- synthetic data


def synth_mixture(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
    split: str = "train",
    hierarchical: bool = False,
    num_superclasses: int = 4,
    within_ratio: float = 0.5,
    image_shape: tuple[int, int, int] | None = None,
) -> Dataset:
    """Gaussian blobs, one per class, with unit-variance isotropic noise.

    Class means are a function of ``seed`` alone; sample noise is drawn from a
    stream keyed by (seed, split), so train and test share the class structure
    but never a sample. The hierarchical variant places fine-class means
    around superclass means, at ``within_ratio`` times the superclass spread.
    """
    if separation <= 0:
        raise ConfigError(f"separation must be positive, got {separation}")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    if image_shape is not None and int(np.prod(image_shape)) != dim:
        raise ConfigError(f"image shape {image_shape} does not hold {dim} values")

    mean_rng = np.random.default_rng([seed, 0])
    scale = separation / np.sqrt(dim)
    if hierarchical:
        if num_classes % num_superclasses:
            raise ConfigError(f"{num_classes} classes do not split into {num_superclasses} superclasses")
        fine_per_super = num_classes // num_superclasses
        supers = mean_rng.standard_normal((num_superclasses, dim)) * scale
        offsets = mean_rng.standard_normal((num_classes, dim)) * scale * within_ratio
        means = supers[np.arange(num_classes) // fine_per_super] + offsets
        superclass = np.arange(num_classes) // fine_per_super
    else:
        means = mean_rng.standard_normal((num_classes, dim)) * scale
        superclass = None

    sample_rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + sample_rng.standard_normal((labels.size, dim))
    if image_shape is not None:
        x = x.reshape(-1, *image_shape)
    return Dataset(
        x.astype(np.float32),
        labels,
        num_classes,
        split=split,
        meta={"class_means": means, "superclass": superclass, "seed": seed},
    )


# ---------------------------------------------------------------- batching / augmentation


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Index arrays covering a fresh permutation of range(n); last batch may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def sample_crop_params(rng: np.random.Generator, n: int, pad: int = 4, flip_prob: float = 0.5):
    """Per-sample (dy, dx) crop offsets in [0, 2*pad] and horizontal-flip flags."""
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < flip_prob
    return offsets, flips


def augment(
    batch: np.ndarray,
    rng: np.random.Generator,
    pad: int = 4,
    flip_prob: float = 0.5,
    padding_mode: str = "constant",
) -> np.ndarray:
    """Pad by ``pad`` on every side, crop back to the input size, random h-flip.

    ``padding_mode`` is ``"constant"`` (zeros) or ``"reflect"``.
    """
    if batch.ndim != 4:
        raise ContractError(f"augment expects [N, C, H, W], got shape {batch.shape}")
    if padding_mode not in ("constant", "reflect"):
        raise ConfigError(f"unknown padding mode {padding_mode!r}")
    n, _, h, w = batch.shape
    offsets, flips = sample_crop_params(rng, n, pad, flip_prob)
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=padding_mode)
    out = np.empty_like(batch)
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out
