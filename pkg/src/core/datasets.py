"""
Desk-scale datasets: labeled 2-D synthetic sets of graded difficulty and an
IDX (MNIST-style) image loader.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from src.core.errors import ContractViolation, IdxFormatError
from src.schemas.experiment import DatasetKind, DatasetSpec

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise ContractViolation("dataset inputs must be a non-empty 2-D array")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ContractViolation(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, index: np.ndarray, name: Optional[str] = None) -> "Dataset":
        return Dataset(self.inputs[index], self.targets[index], self.num_classes, name or self.name)

    def split(self, validation_fraction: float, seed: int = 0) -> Tuple["Dataset", "Dataset"]:
        """Shuffle once with `seed` and cut off a validation part."""
        if not 0.0 < validation_fraction < 1.0:
            raise ContractViolation("validation fraction must lie in (0, 1)")
        order = np.random.default_rng(seed).permutation(len(self))
        n_val = max(1, int(round(validation_fraction * len(self))))
        if n_val >= len(self):
            raise ContractViolation("validation split leaves no training data")
        return (
            self.subset(order[n_val:], f"{self.name}/train"),
            self.subset(order[:n_val], f"{self.name}/validation"),
        )

    def batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.targets[idx]


# =============================================================================
# Synthetic sets
# =============================================================================

def _class_sizes(n: int) -> Tuple[int, int]:
    return n - n // 2, n // 2


def _blobs(n: int, noise: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    # uniform disks of radius 1 at (-2.5, 0) and (2.5, 0): separable by x = 0 without noise
    sizes = _class_sizes(n)
    points, labels = [], []
    for label, (size, center) in enumerate(zip(sizes, (-2.5, 2.5))):
        radius = np.sqrt(rng.uniform(0.0, 1.0, size))
        angle = rng.uniform(0.0, 2.0 * np.pi, size)
        pts = np.column_stack([center + radius * np.cos(angle), radius * np.sin(angle)])
        points.append(pts)
        labels.append(np.full(size, label))
    return np.vstack(points), np.concatenate(labels)


def _concentric(n: int, noise: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    sizes = _class_sizes(n)
    points, labels = [], []
    for label, (size, (r_lo, r_hi)) in enumerate(zip(sizes, ((0.0, 1.0), (2.0, 3.0)))):
        radius = np.sqrt(rng.uniform(r_lo ** 2, r_hi ** 2, size))
        angle = rng.uniform(0.0, 2.0 * np.pi, size)
        points.append(np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
        labels.append(np.full(size, label))
    return np.vstack(points), np.concatenate(labels)


def _spirals(n: int, noise: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    # two interleaved arms making 1.5 turns each
    sizes = _class_sizes(n)
    points, labels = [], []
    for label, size in enumerate(sizes):
        t = np.sqrt(rng.uniform(0.02, 1.0, size))
        angle = 3.0 * np.pi * t + label * np.pi
        points.append(np.column_stack([t * np.cos(angle), t * np.sin(angle)]) * 3.0)
        labels.append(np.full(size, label))
    return np.vstack(points), np.concatenate(labels)


_GENERATORS = {
    DatasetKind.BLOBS: _blobs,
    DatasetKind.CONCENTRIC: _concentric,
    DatasetKind.SPIRALS: _spirals,
}


def make_synthetic_dataset(kind: DatasetKind, n: int, noise: float = 0.0, seed: int = 0) -> Dataset:
    """
    Deterministic two-class 2-D dataset.

    BLOBS is linearly separable, CONCENTRIC needs one bend, SPIRALS needs
    many; `noise` adds isotropic Gaussian jitter of that standard deviation.
    """
    if n < 10:
        raise ContractViolation(f"synthetic datasets need at least 10 points, got {n}")
    if kind not in _GENERATORS:
        raise ContractViolation(f"{kind} is not a synthetic dataset kind")
    rng = np.random.default_rng(seed)
    x, y = _GENERATORS[kind](n, noise, rng)
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    order = rng.permutation(n)
    return Dataset(x[order].astype(np.float64), y[order].astype(np.int64), 2, kind.value)


def linear_probe_accuracy(dataset: Dataset) -> float:
    """Training accuracy of a least-squares linear classifier on one-hot targets."""
    x = np.column_stack([dataset.inputs, np.ones(len(dataset))])
    onehot = np.eye(dataset.num_classes)[dataset.targets]
    coef, *_ = np.linalg.lstsq(x, onehot, rcond=None)
    return float(np.mean(np.argmax(x @ coef, axis=1) == dataset.targets))


# =============================================================================
# IDX files
# =============================================================================

def _read_idx(path: Path, magic: int, ndim: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise IdxFormatError(f"IDX file not found: {path}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path} is truncated: {len(raw)} bytes, header needs {header_len}")
    header = np.frombuffer(raw[:header_len], dtype=">u4")
    if int(header[0]) != magic:
        raise IdxFormatError(f"{path} has magic 0x{int(header[0]):08x}, expected 0x{magic:08x}")
    dims = tuple(int(d) for d in header[1:])
    expected = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) < expected:
        raise IdxFormatError(f"{path} is truncated: {len(body)} data bytes, expected {expected}")
    return dims, np.frombuffer(body[:expected], dtype=np.uint8)


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    """Flattened images scaled to [0, 1] with their integer labels."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    (n_images, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_images != n_labels:
        raise IdxFormatError(
            f"image count {n_images} in {images_path.name} does not match label count {n_labels} in {labels_path.name}"
        )
    if n_images == 0:
        raise IdxFormatError(f"{images_path} contains no images")
    inputs = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    targets = labels.astype(np.int64)
    classes = int(targets.max()) + 1 if num_classes is None else num_classes
    if classes <= int(targets.max()):
        raise IdxFormatError(f"{labels_path.name} has label {int(targets.max())} but only {classes} classes were requested")
    logger.info(f"Loaded {n_images} IDX images of {rows}x{cols} from {images_path}")
    return Dataset(inputs, targets, classes, images_path.stem)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write uint8 images (n x rows x cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(
        np.array([IDX_IMAGES_MAGIC, n, rows, cols], dtype=">u4").tobytes() + images.tobytes()
    )
    Path(labels_path).write_bytes(
        np.array([IDX_LABELS_MAGIC, labels.size], dtype=">u4").tobytes() + labels.tobytes()
    )


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == DatasetKind.IDX:
        return load_idx(spec.images_path, spec.labels_path)
    return make_synthetic_dataset(spec.kind, spec.n, spec.noise, spec.seed)
