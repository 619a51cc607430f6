import numpy as np
import pytest

from scripts.datasets import (
    CIFAR_RECORD,
    SyntheticSpec,
    balanced_subset,
    ingest_dataset,
    load_cifar10,
    make_synthetic,
    read_cifar_file,
)
from utils.exceptions import ConfigurationError, DatasetFormatError


def write_cifar(path, labels, seed=0):
    rng = np.random.default_rng(seed)
    records = rng.integers(0, 256, size=(len(labels), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records.tofile(path)
    return records


def test_synthetic_is_deterministic():
    a = make_synthetic(SyntheticSpec(samples=64, seed=3))
    b = make_synthetic(SyntheticSpec(samples=64, seed=3))
    np.testing.assert_array_equal(a.train.images, b.train.images)
    np.testing.assert_array_equal(a.val.labels, b.val.labels)
    assert a.name == "synthetic-s3"


def test_synthetic_seeds_differ():
    a = make_synthetic(SyntheticSpec(samples=64, seed=3))
    b = make_synthetic(SyntheticSpec(samples=64, seed=4))
    assert not np.allclose(a.train.images, b.train.images)


def test_synthetic_split_and_balance():
    data = make_synthetic(SyntheticSpec(samples=100, num_classes=4, val_fraction=0.25), "float64")
    assert len(data.val) == 25 and len(data.train) == 75
    total = data.train.class_histogram() + data.val.class_histogram()
    assert total.tolist() == [25, 25, 25, 25]
    assert data.image_shape == (8, 8, 3)
    assert data.train.images.dtype == np.float64


def test_synthetic_spec_validation():
    with pytest.raises(ConfigurationError):
        make_synthetic(SyntheticSpec(num_classes=1))
    with pytest.raises(ConfigurationError):
        make_synthetic(SyntheticSpec(val_fraction=1.0))


def test_read_cifar_file(tmp_path):
    path = tmp_path / "batch.bin"
    records = write_cifar(path, [3, 0, 9])
    images, labels = read_cifar_file(path)
    assert images.shape == (3, 32, 32, 3)
    assert labels.tolist() == [3, 0, 9]
    # planar storage: the second channel plane starts after 1024 bytes
    assert images[0, 0, 0, 1] == records[0, 1 + 1024]
    assert images[1, 0, 1, 0] == records[1, 2]


def test_cifar_bad_size(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(b"\x00" * (CIFAR_RECORD + 5))
    with pytest.raises(DatasetFormatError):
        read_cifar_file(path)


def test_cifar_bad_label(tmp_path):
    path = tmp_path / "batch.bin"
    write_cifar(path, [1, 10])
    with pytest.raises(DatasetFormatError):
        read_cifar_file(path)


def test_cifar_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        read_cifar_file(tmp_path / "absent.bin")


def test_load_cifar10(tmp_path):
    write_cifar(tmp_path / "a.bin", np.arange(40) % 10, seed=1)
    data = load_cifar10(tmp_path, val_fraction=0.25, dtype="float64", files=["a.bin"])
    assert len(data.train) == 30 and len(data.val) == 10
    assert data.num_classes == 10
    pooled = np.concatenate([data.train.images, data.val.images])
    np.testing.assert_allclose(pooled.mean(axis=(0, 1, 2)), 0.0, atol=1e-9)


def test_balanced_subset():
    labels = np.random.default_rng(0).permutation(np.arange(5000) % 10)
    index = balanced_subset(labels, 1000, 10, seed=2)
    assert len(index) == 1000
    assert np.bincount(labels[index], minlength=10).tolist() == [100] * 10
    np.testing.assert_array_equal(index, balanced_subset(labels, 1000, 10, seed=2))


def test_ingest_dataset(tmp_path):
    data = ingest_dataset({"kind": "synthetic", "samples": 32, "image_size": 6})
    assert data.image_shape == (6, 6, 3)
    with pytest.raises(ConfigurationError):
        ingest_dataset({"kind": "synthetic", "pixels": 4})
    with pytest.raises(ConfigurationError):
        ingest_dataset({"kind": "imagenet"})
    with pytest.raises(ConfigurationError):
        ingest_dataset({"kind": "cifar10"})


def test_ingest_cifar_from_data_root(tmp_path):
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)]:
        write_cifar(tmp_path / name, np.arange(20) % 10)
    data = ingest_dataset({"kind": "cifar10", "subset": 50, "seed": 1}, data_root=tmp_path)
    assert len(data.train) + len(data.val) == 50
