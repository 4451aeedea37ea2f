"""CIFAR-10 binary ingestion, Gaussian noise sets and correct-prediction subsets."""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import seeded_rng

CIFAR10_DIM = 3072
CIFAR10_CLASSES = 10
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES = ["test_batch.bin"]


class DataFormatError(ValueError):
    """A batch file is missing, truncated, or carries an out-of-range label."""


class EmptySubsetError(ValueError):
    """No sample survived the correctness filter; downstream sweeps are undefined."""


@dataclass
class Dataset:
    """Flat input matrix (count x dim) with optional integer labels.

    Pixel data is scaled to [0, 1]; noise sets are standard normal. Treat
    instances as immutable after construction.
    """

    inputs: np.ndarray
    labels: Optional[np.ndarray]
    name: str

    @property
    def count(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]


def _read_binary_batch(path, record_dim, num_classes):
    """Parse one binary batch: records of 1 label byte + record_dim pixel bytes."""
    if not os.path.isfile(path):
        raise DataFormatError(f"missing batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    record_size = record_dim + 1
    n_records, leftover = divmod(raw.size, record_size)
    if leftover != 0 or n_records == 0:
        raise DataFormatError(
            f"truncated batch file {path}: {raw.size} bytes is not a whole "
            f"number of {record_size}-byte records (offset {n_records * record_size})"
        )
    records = raw.reshape(n_records, record_size)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(
            f"label byte {labels[i]} out of range [0, {num_classes}) in {path} "
            f"at record {i} (byte offset {i * record_size})"
        )
    inputs = records[:, 1:].astype(np.float64) / 255.0
    return inputs, labels


def load_cifar10(directory, split):
    """Load a CIFAR-10 split from the standard binary batch files.

    Records are 3073 bytes: one label byte, then 3072 pixel bytes in
    plane-major order (1024 R, 1024 G, 1024 B). Pixels are divided by 255.
    The train split concatenates the five train batches in file order.
    Accepts either the directory holding the .bin files or its parent
    containing ``cifar-10-batches-bin``.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    nested = os.path.join(directory, "cifar-10-batches-bin")
    if os.path.isdir(nested):
        directory = nested
    files = TRAIN_FILES if split == "train" else TEST_FILES
    parts = [_read_binary_batch(os.path.join(directory, f), CIFAR10_DIM, CIFAR10_CLASSES)
             for f in files]
    inputs = np.concatenate([p[0] for p in parts], axis=0)
    labels = np.concatenate([p[1] for p in parts], axis=0)
    return Dataset(inputs=inputs, labels=labels, name=f"cifar10-{split}")


def gaussian_noise_set(dim, count, seed):
    """Unlabeled dataset of i.i.d. standard normal rows."""
    if dim < 1 or count < 1:
        raise ValueError(f"dim and count must be positive, got {dim}, {count}")
    rng = seeded_rng(seed)
    inputs = rng.standard_normal((count, dim))
    return Dataset(inputs=inputs, labels=None, name=f"noise-{dim}d-{count}n-seed{seed}")


def correct_subset(model, data):
    """Samples the model classifies correctly with no perturbation.

    By construction the returned subset has relative accuracy exactly 1.0
    at epsilon = 0.
    """
    from .model import predict

    if data.labels is None:
        raise ValueError(f"dataset {data.name!r} has no labels")
    classes, _ = predict(model, data.inputs)
    mask = classes == data.labels
    if not mask.any():
        raise EmptySubsetError(f"model classifies no sample of {data.name!r} correctly")
    return Dataset(inputs=data.inputs[mask].copy(),
                   labels=data.labels[mask].copy(),
                   name=f"{data.name}-correct")
