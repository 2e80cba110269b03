import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.datasets import (
    Dataset,
    linear_probe_accuracy,
    load_dataset,
    load_idx,
    make_synthetic_dataset,
    write_idx,
)
from src.core.errors import ContractViolation, IdxFormatError
from src.schemas.experiment import DatasetKind, DatasetSpec


@pytest.fixture
def idx_fixture(tmp_path):
    images = np.zeros((4, 28, 28), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[1, 5, 5] = 128
    images[3, 27, 27] = 255
    labels = np.array([3, 1, 4, 1], dtype=np.uint8)
    images_path, labels_path = tmp_path / "images.idx3", tmp_path / "labels.idx1"
    write_idx(images, labels, images_path, labels_path)
    return images_path, labels_path


def test_blobs_are_separable():
    data = make_synthetic_dataset(DatasetKind.BLOBS, 100, noise=0.0, seed=1)
    assert len(data) == 100
    assert data.input_dim == 2
    left = data.inputs[data.targets == 0, 0]
    right = data.inputs[data.targets == 1, 0]
    assert left.max() < 0 < right.min()


def test_same_seed_same_dataset():
    a = make_synthetic_dataset(DatasetKind.SPIRALS, 200, noise=0.1, seed=5)
    b = make_synthetic_dataset(DatasetKind.SPIRALS, 200, noise=0.1, seed=5)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.targets, b.targets)


def test_difficulty_is_graded():
    blobs = linear_probe_accuracy(make_synthetic_dataset(DatasetKind.BLOBS, 600, 0.1, 0))
    spirals = linear_probe_accuracy(make_synthetic_dataset(DatasetKind.SPIRALS, 600, 0.1, 0))
    assert spirals < blobs
    assert blobs > 0.95


def test_too_small_dataset_is_rejected():
    with pytest.raises(ContractViolation):
        make_synthetic_dataset(DatasetKind.BLOBS, 9)


def test_split_is_disjoint_and_deterministic():
    data = make_synthetic_dataset(DatasetKind.CONCENTRIC, 100, 0.0, 0)
    train_a, val_a = data.split(0.25, seed=3)
    train_b, val_b = data.split(0.25, seed=3)
    assert len(train_a) == 75 and len(val_a) == 25
    assert np.array_equal(val_a.inputs, val_b.inputs)
    rows = {tuple(r) for r in train_a.inputs}
    assert not any(tuple(r) in rows for r in val_a.inputs)


def test_batches_cover_every_row_once():
    data = make_synthetic_dataset(DatasetKind.BLOBS, 50, 0.0, 0)
    seen = []
    for xb, yb in data.batches(16, np.random.default_rng(0)):
        assert len(xb) == len(yb) <= 16
        seen.extend(map(tuple, xb))
    assert sorted(seen) == sorted(map(tuple, data.inputs))


def test_dataset_rejects_mismatched_targets():
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)


# =============================================================================
# IDX
# =============================================================================

def test_load_idx_fixture(idx_fixture):
    data = load_idx(*idx_fixture)
    assert data.inputs.shape == (4, 784)
    assert data.targets.tolist() == [3, 1, 4, 1]
    assert data.inputs[0, 0] == 1.0
    assert data.inputs[3, 783] == 1.0
    assert data.inputs[1, 5 * 28 + 5] == pytest.approx(128 / 255)
    assert data.num_classes == 5


def test_load_idx_class_count(idx_fixture):
    assert load_idx(*idx_fixture, num_classes=10).num_classes == 10
    with pytest.raises(IdxFormatError, match="label 4"):
        load_idx(*idx_fixture, num_classes=3)


def test_idx_count_mismatch_names_both_counts(tmp_path):
    images_path, labels_path = tmp_path / "i", tmp_path / "l"
    write_idx(np.zeros((4, 2, 2)), np.zeros(3), images_path, labels_path)
    with pytest.raises(IdxFormatError) as excinfo:
        load_idx(images_path, labels_path)
    assert "4" in str(excinfo.value) and "3" in str(excinfo.value)


def test_idx_bad_magic(idx_fixture):
    images_path, labels_path = idx_fixture
    raw = bytearray(images_path.read_bytes())
    raw[3] = 0x01
    images_path.write_bytes(bytes(raw))
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(images_path, labels_path)


def test_idx_truncated(idx_fixture):
    images_path, labels_path = idx_fixture
    raw = images_path.read_bytes()
    images_path.write_bytes(raw[:-10])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(images_path, labels_path)


def test_idx_missing_file(tmp_path):
    with pytest.raises(IdxFormatError, match="not found"):
        load_idx(tmp_path / "nope", tmp_path / "nope2")


def test_load_dataset_dispatches_on_kind(idx_fixture):
    images_path, labels_path = idx_fixture
    spec = DatasetSpec(kind=DatasetKind.IDX, images_path=str(images_path), labels_path=str(labels_path))
    assert len(load_dataset(spec)) == 4
    assert load_dataset(DatasetSpec(kind=DatasetKind.BLOBS, n=40)).name == "BLOBS"


def test_idx_spec_requires_paths():
    with pytest.raises(ValueError):
        DatasetSpec(kind=DatasetKind.IDX)
