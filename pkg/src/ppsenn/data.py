"""Dataset ingestion and preprocessing.

Handles the big-endian IDX container used by the MNIST family, the
pixel-range normalization and optional bilinear upscale applied before
training, and a seeded 2-D Gaussian-blob generator for small latent-space
experiments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import bilinear_resize_array

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Flat (n, d) inputs with integer labels in [0, class_count)."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    input_dim: int
    image_shape: tuple | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("Dataset: inputs and labels length mismatch")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("Dataset: label outside [0, class_count)")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count,
                       self.input_dim, self.image_shape)


@dataclass
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset


def _read_header(data: bytes, expected_magic: int, n_dims: int, kind: str):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise IdxFormatError(f"{kind}: truncated header, got {len(data)} bytes")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"{kind}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{n_dims}i", data[4:need])
    return dims, data[need:]


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> Dataset:
    """Decode paired IDX image/label streams into a raw dataset (pixels 0..255)."""
    (n, rows, cols), payload = _read_header(image_bytes, IDX_IMAGE_MAGIC, 3, "images")
    expected = n * rows * cols
    if len(payload) != expected:
        raise IdxFormatError(f"images: payload has {len(payload)} bytes, expected {expected}")
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols)

    (n_labels,), label_payload = _read_header(label_bytes, IDX_LABEL_MAGIC, 1, "labels")
    if len(label_payload) != n_labels:
        raise IdxFormatError(f"labels: payload has {len(label_payload)} bytes, expected {n_labels}")
    if n_labels != n:
        raise IdxFormatError(f"count mismatch: {n} images vs {n_labels} labels")
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(np.int64)

    class_count = int(labels.max()) + 1 if n else 0
    return Dataset(images, labels, class_count, rows * cols, image_shape=(rows, cols))


def write_idx(dataset: Dataset) -> tuple[bytes, bytes]:
    """Encode a raw (0..255 valued) dataset back to IDX image/label streams."""
    if dataset.image_shape is None:
        raise ValueError("write_idx: dataset has no image shape")
    rows, cols = dataset.image_shape
    n = len(dataset)
    pixels = np.rint(dataset.inputs).astype(np.uint8)
    image_bytes = struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols) + pixels.tobytes()
    label_bytes = struct.pack(">ii", IDX_LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return image_bytes, label_bytes


def preprocess(raw: Dataset, target_side: int | None = None) -> Dataset:
    """Map pixels linearly from [0, 255] to [-1, 1], optionally upscaling first.

    Upscaling (bilinear, corner-aligned) happens in the 0..255 pixel domain;
    endpoints map exactly: 0 -> -1, 255 -> +1.
    """
    inputs = raw.inputs
    shape = raw.image_shape
    if target_side is not None and shape is not None and target_side != shape[0]:
        if target_side < shape[0]:
            raise ValueError("preprocess: target_side must be >= source side")
        n = len(raw)
        resized = np.empty((n, target_side * target_side))
        for i in range(n):
            img = inputs[i].reshape(shape)
            resized[i] = bilinear_resize_array(img, target_side, target_side).reshape(-1)
        inputs = resized
        shape = (target_side, target_side)
    inputs = inputs / 127.5 - 1.0
    return Dataset(inputs, raw.labels, raw.class_count, inputs.shape[1], image_shape=shape)


def deprocess_image(values: np.ndarray) -> np.ndarray:
    """Inverse of the [-1, 1] normalization; returns uint8 pixels."""
    return np.clip(np.rint((values + 1.0) * 127.5), 0, 255).astype(np.uint8)


def synth2d(class_count: int, n_per_class: int, centers, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs in the plane, one blob per class."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (class_count, 2):
        raise ValueError(f"synth2d: need {class_count} 2-D centers, got shape {centers.shape}")
    if spread < 0:
        raise ValueError("synth2d: spread must be nonnegative")
    rng = np.random.default_rng(seed)
    points = np.repeat(centers, n_per_class, axis=0) + spread * rng.standard_normal(
        (class_count * n_per_class, 2))
    labels = np.repeat(np.arange(class_count), n_per_class)
    return Dataset(points, labels, class_count, 2)


def split(train_raw: Dataset, fraction: float = 0.10, seed: int = 0,
          test: Dataset | None = None) -> SplitDataset:
    """Shuffle and carve a validation fraction off the training data."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("split: fraction must lie in (0, 1)")
    n = len(train_raw)
    if n < 2:
        raise ValueError("split: need at least 2 samples")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if test is None:
        test = train_raw.subset(np.array([], dtype=np.intp))
    return SplitDataset(train_raw.subset(train_idx), train_raw.subset(val_idx), test)
