"""MNIST IDX container parsing, pixel normalization, dataset assembly.

Accepts raw and gzip-compressed IDX files (sniffed by magic bytes). The
8-bit originals are kept resident; normalization to [-1, 1] happens at
feed/deformation time.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
ROWS = 28
COLS = 28


class IdxFormatError(Exception):
    """Base for malformed IDX input."""


class BadMagic(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class UnexpectedDims(IdxFormatError):
    pass


class LabelOutOfRange(IdxFormatError):
    pass


class CountMismatch(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Ordered image/label pairs for one split; immutable after load."""

    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8
    split_tag: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatch(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.labels)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _read_header(data: bytes, n_fields: int, what: str) -> tuple[int, ...]:
    need = 4 * n_fields
    if len(data) < need:
        raise TruncatedFile(
            f"{what}: header needs {need} bytes, file has {len(data)} (offset 0)"
        )
    return struct.unpack(f">{n_fields}I", data[:need])


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file into a (n, 28, 28) uint8 array."""
    data = _maybe_gunzip(data)
    magic, n, rows, cols = _read_header(data, 4, "images")
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"images magic at offset 0: got {magic:#010x}, want {IMAGE_MAGIC:#010x}")
    if rows != ROWS:
        raise UnexpectedDims(f"rows field at offset 8: got {rows}, want {ROWS}")
    if cols != COLS:
        raise UnexpectedDims(f"cols field at offset 12: got {cols}, want {COLS}")
    payload = data[16:]
    need = n * rows * cols
    if len(payload) < need:
        raise TruncatedFile(
            f"images payload at offset 16: header claims {n} images "
            f"({need} bytes), file holds {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8, count=need)
    return arr.reshape(n, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX label file into a (n,) uint8 array with entries in [0, 9]."""
    data = _maybe_gunzip(data)
    magic, n = _read_header(data, 2, "labels")
    if magic != LABEL_MAGIC:
        raise BadMagic(f"labels magic at offset 0: got {magic:#010x}, want {LABEL_MAGIC:#010x}")
    payload = data[8:]
    if len(payload) < n:
        raise TruncatedFile(
            f"labels payload at offset 8: header claims {n}, file holds {len(payload)}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8, count=n)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise LabelOutOfRange(f"label {labels[i]} at index {i} (offset {8 + i}) not in [0, 9]")
    return labels


def write_idx_images(images: np.ndarray) -> bytes:
    """Serialize (n, 28, 28) uint8 images to IDX bytes (test-fixture writer)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n = images.shape[0]
    return struct.pack(">4I", IMAGE_MAGIC, n, ROWS, COLS) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    """Serialize (n,) labels to IDX bytes (test-fixture writer)."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


def normalize_pixel(intensity: int) -> float:
    """Map an 8-bit intensity to the network input range [-1, 1]."""
    return intensity / 127.5 - 1.0


def normalize_image(img: np.ndarray) -> np.ndarray:
    """Vectorized normalize_pixel over a uint8 image; returns float32."""
    return (img.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def load_dataset(images_path, labels_path, split_tag: str = "train") -> Dataset:
    """Load and zip an IDX image/label file pair."""
    with open(images_path, "rb") as f:
        images = parse_idx_images(f.read())
    with open(labels_path, "rb") as f:
        labels = parse_idx_labels(f.read())
    if len(images) != len(labels):
        raise CountMismatch(
            f"{images_path}: {len(images)} images vs {labels_path}: {len(labels)} labels"
        )
    return Dataset(images=images, labels=labels, split_tag=split_tag)
