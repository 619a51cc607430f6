"""
Dataset ingestion: seeded synthetic image sets and the CIFAR-10 binary format.

Both sources produce a DataSplit of normalized channels-last images with a
deterministic train/val split derived from a seed.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from utils.exceptions import ConfigurationError, DatasetFormatError

logger = logging.getLogger(__name__)

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_CLASSES = 10
CIFAR_RECORD = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS

CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.num_classes)

    def astype(self, dtype):
        return Dataset(self.images.astype(dtype), self.labels, self.num_classes)

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    val: Dataset
    name: str = "dataset"

    @property
    def num_classes(self):
        return self.train.num_classes

    @property
    def image_shape(self):
        return self.train.image_shape

    def astype(self, dtype):
        return DataSplit(self.train.astype(dtype), self.val.astype(dtype), self.name)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Generator parameters of a synthetic image set.

    Every class has a smooth random prototype image; samples are the
    prototype plus Gaussian noise of standard deviation `noise`. Distinct
    `seed`s give distinct datasets with the same statistics.
    """

    image_size: int = 8
    num_classes: int = 4
    samples: int = 512
    seed: int = 7
    noise: float = 0.5
    val_fraction: float = 0.25
    channels: int = CIFAR_CHANNELS

    def validate(self):
        if self.image_size < 2:
            raise ConfigurationError("Synthetic images need a side of at least 2.", field="image_size")
        if self.num_classes < 2:
            raise ConfigurationError("At least two classes are required.", field="num_classes")
        if self.samples < 2:
            raise ConfigurationError("At least two samples are required.", field="samples")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1).", field="val_fraction")
        if self.noise < 0:
            raise ConfigurationError("Noise cannot be negative.", field="noise")
        return self


def _smooth_prototypes(rng, num_classes, side, channels):
    coarse = rng.standard_normal((num_classes, 2, 2, channels))
    # nearest-neighbour upsample keeps prototypes spatially structured
    reps = -(-side // 2)
    fine = coarse.repeat(reps, axis=1).repeat(reps, axis=2)[:, :side, :side, :]
    return fine + 0.25 * rng.standard_normal((num_classes, side, side, channels))


def split(images, labels, num_classes, val_fraction, seed, name):
    """Deterministic stratification-free train/val split of a labelled set."""
    order = np.random.default_rng(seed).permutation(len(labels))
    n_val = max(1, int(round(len(labels) * val_fraction)))
    val, train = order[:n_val], order[n_val:]
    return DataSplit(
        Dataset(images[train], labels[train], num_classes),
        Dataset(images[val], labels[val], num_classes),
        name,
    )


def make_synthetic(spec, dtype="float32"):
    """
    Generate a synthetic DataSplit.

    Labels are balanced (sample i has class i mod k before shuffling).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    prototypes = _smooth_prototypes(rng, spec.num_classes, spec.image_size, spec.channels)
    labels = np.arange(spec.samples, dtype=np.int64) % spec.num_classes
    noise = rng.standard_normal((spec.samples, spec.image_size, spec.image_size, spec.channels))
    images = (prototypes[labels] + spec.noise * noise).astype(dtype)
    name = f"synthetic-s{spec.seed}"
    return split(images, labels, spec.num_classes, spec.val_fraction, spec.seed + 1, name)


def read_cifar_file(path, num_classes=CIFAR_CLASSES):
    """
    Read one CIFAR-10 binary batch.

    Returns:
        (images uint8 (n, 32, 32, 3), labels int64)

    Raises:
        DatasetFormatError: size not a multiple of the record length, or label out of range
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Dataset file not found: {path}", field="data_root")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise DatasetFormatError(
            path,
            f"Dataset file '{path}' has {raw.size} bytes, not a multiple of the "
            f"{CIFAR_RECORD}-byte CIFAR-10 record.",
        )
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise DatasetFormatError(path, f"Dataset file '{path}' has label {labels.max()} "
                                       f"outside [0, {num_classes}).")
    # stored planar (channel, row, col)
    images = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return images, labels


def normalize(images, dtype="float32"):
    """Per-channel standardization of uint8 images"""
    x = images.astype(np.float64) / 255.0
    mean = x.mean(axis=(0, 1, 2))
    std = x.std(axis=(0, 1, 2)) + 1e-8
    return ((x - mean) / std).astype(dtype)


def balanced_subset(labels, n, num_classes, seed):
    """
    Seeded subset of `n` indices with (as near as possible) equal class counts.
    """
    rng = np.random.default_rng(seed)
    per_class = -(-n // num_classes)
    chosen = []
    for k in range(num_classes):
        members = np.flatnonzero(labels == k)
        take = min(per_class, len(members))
        chosen.append(rng.choice(members, size=take, replace=False))
    index = np.concatenate(chosen)
    return np.sort(rng.permutation(index)[:n])


def load_cifar10(root, subset=None, seed=0, val_fraction=0.2, dtype="float32", files=None):
    """
    Load CIFAR-10 binary batches from `root`.

    Args:
        root: Directory containing data_batch_*.bin
        subset: Optional number of samples (class-balanced, seeded)
        seed: Seed of the subset and split
        val_fraction: Fraction of the samples held out for validation
        dtype: Image dtype
        files: Batch file names; defaults to the five training batches
    """
    root = Path(root)
    parts = [read_cifar_file(root / name) for name in (files or CIFAR_TRAIN_FILES)]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if subset:
        index = balanced_subset(labels, subset, CIFAR_CLASSES, seed)
        images, labels = images[index], labels[index]
    logger.info("loaded %d CIFAR-10 records from %s", len(labels), root)
    return split(normalize(images, dtype), labels, CIFAR_CLASSES, val_fraction, seed, "cifar10")


def ingest_dataset(source, dtype="float32", data_root=None):
    """
    Build a DataSplit from a dataset description.

    Args:
        source: Mapping with "kind": "synthetic" (SyntheticSpec fields) or
            "cifar10" ("path", optional "subset", "seed", "val_fraction")
        dtype: Image dtype
        data_root: Fallback directory for CIFAR-10 when "path" is absent

    Returns:
        DataSplit
    """
    source = dict(source)
    kind = source.pop("kind", "synthetic")
    if kind == "synthetic":
        try:
            spec = SyntheticSpec(**source)
        except TypeError as e:
            raise ConfigurationError(f"Invalid synthetic dataset spec: {e}", field="dataset")
        return make_synthetic(spec, dtype)
    if kind == "cifar10":
        path = source.pop("path", None) or data_root
        if path is None:
            raise ConfigurationError("CIFAR-10 dataset needs a 'path'.", field="dataset.path")
        return load_cifar10(path, dtype=dtype, **source)
    raise ConfigurationError(f"Unknown dataset kind '{kind}'. Use 'synthetic' or 'cifar10'.",
                             field="dataset.kind")
