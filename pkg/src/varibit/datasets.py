"""Dataset ingestion and synthetic desk-scale data.

Supports the big-endian IDX image/label container, plain numeric CSV, and
two generators: Gaussian blobs for fast classifier checks and structured
noisy "digits" that give a 28x28 image task without external downloads.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .rng import substream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """The file does not parse as the expected IDX container."""


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs/labels count mismatch")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def sample_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    def split(self, train_count: int) -> tuple["LabeledDataset", "LabeledDataset"]:
        """First ``train_count`` samples vs. the rest."""
        if not 0 < train_count < len(self):
            raise ValueError("train_count must leave both parts nonempty")
        return (LabeledDataset(self.inputs[:train_count], self.labels[:train_count]),
                LabeledDataset(self.inputs[train_count:], self.labels[train_count:]))


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(f"truncated file: expected {count} bytes of {what}")
    return data


def _read_idx(path, magic: int, ndim: int, what: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = _read_exact(f, 4 * (1 + ndim), "header")
        fields = struct.unpack(f">{1 + ndim}i", header)
        if fields[0] != magic:
            raise IdxFormatError(
                f"bad magic in {what} file: 0x{fields[0]:08x}, expected 0x{magic:08x}")
        dims = fields[1:]
        if any(d < 0 for d in dims):
            raise IdxFormatError(f"negative dimension in {what} file")
        count = int(np.prod(dims)) if dims else 0
        payload = _read_exact(f, count, "payload")
        if f.read(1):
            raise IdxFormatError(f"trailing data after {what} payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3, "image")
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1, "label")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return LabeledDataset(images.astype(np.float64) / 255.0, labels)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ValueError("expected images (N, H, W) and labels (N,)")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def generate_blobs(classes: int, samples: int, separation: float, seed: int,
                   dim: int = 2) -> LabeledDataset:
    """Unit-variance Gaussian clusters with adjacent class means ``separation``
    apart along the first axis, centered at the origin."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if samples < classes:
        raise ValueError("need at least one sample per class")
    rng = substream(seed, "blobs")
    labels = rng.integers(0, classes, size=samples)
    means = np.zeros((classes, dim))
    means[:, 0] = (np.arange(classes) - (classes - 1) / 2.0) * separation
    points = means[labels] + rng.standard_normal((samples, dim))
    return LabeledDataset(points, labels)


def _digit_prototypes() -> np.ndarray:
    protos = np.zeros((10, 28, 28))
    protos[0, 4:24, 8:20] = 1.0
    protos[1, 8:20, 4:24] = 1.0
    protos[2, :14, :14] = 1.0
    protos[3, :14, 14:] = 1.0
    protos[4, 14:, :14] = 1.0
    protos[5, 14:, 14:] = 1.0
    rows = np.arange(28)
    protos[6, rows % 4 < 2, :] = 1.0
    protos[7, :, rows % 4 < 2] = 1.0
    ii, jj = np.meshgrid(rows, rows, indexing="ij")
    protos[8][(ii + jj) % 6 < 3] = 1.0
    protos[9][np.abs(ii - 14) + np.abs(jj - 14) < 10] = 1.0
    return protos


def generate_digits(samples: int, seed: int, noise: float = 0.3,
                    classes: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Structured 28x28 uint8 images: one clean pattern per class plus
    Gaussian pixel noise. Learnable by a small CNN in a few epochs."""
    if not 2 <= classes <= 10:
        raise ValueError("classes must be in [2, 10]")
    rng = substream(seed, "digits")
    labels = rng.integers(0, classes, size=samples)
    images = _digit_prototypes()[labels]
    images = images + noise * rng.standard_normal(images.shape)
    images = np.clip(images, 0.0, 1.0)
    return np.round(images * 255.0).astype(np.uint8), labels.astype(np.int64)


def digits_dataset(samples: int, seed: int, noise: float = 0.3,
                   classes: int = 10) -> LabeledDataset:
    images, labels = generate_digits(samples, seed, noise, classes)
    return LabeledDataset(images.astype(np.float64) / 255.0, labels)


def load_csv(path) -> LabeledDataset:
    """Numeric CSV, one sample per row, integer label in the last column.

    A non-numeric first line is treated as a header and skipped.
    """
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    try:
        [float(tok) for tok in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError("CSV needs at least one feature column plus the label")
    return LabeledDataset(data[:, :-1], data[:, -1].astype(np.int64))
