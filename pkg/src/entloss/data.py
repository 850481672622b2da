"""IDX-format ingestion (MNIST/EMNIST container) and dataset utilities.

The IDX container: big-endian header [0x00, 0x00, type, rank] followed by
rank 32-bit big-endian dimension sizes, then the row-major payload. Only the
u8 element type (0x08) is supported. Files may be gzip-compressed; the
loader sniffs the 0x1f8b prefix.
"""

import gzip
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DataIntegrityError,
    IdxParseError,
    InvalidConfigError,
    InvalidInputError,
    TruncatedPayloadError,
    UnsupportedTypeError,
)

log = logging.getLogger(__name__)

GZIP_MAGIC = b"\x1f\x8b"
LETTERS_CLASSES = 26


class ElementType(Enum):
    U8 = 0x08


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class IdxTensor:
    dims: tuple
    element_type: ElementType
    data: bytes

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if any(d < 0 or d >= 2**32 for d in self.dims):
            raise InvalidInputError(f"dims out of 32-bit range: {self.dims}")
        if math.prod(self.dims) != len(self.data):
            raise InvalidInputError(
                f"payload of {len(self.data)} bytes does not match dims {self.dims}"
            )


def parse_idx(buf: bytes) -> IdxTensor:
    """Decode one IDX container from raw bytes."""
    if len(buf) < 4:
        raise TruncatedPayloadError(f"header needs 4 bytes, got {len(buf)}")
    if buf[0] != 0 or buf[1] != 0:
        raise BadMagicError(f"magic must start 0x0000, got {buf[:4].hex()}")
    type_code, rank = buf[2], buf[3]
    if type_code != ElementType.U8.value:
        raise UnsupportedTypeError(f"unsupported element type code 0x{type_code:02x}")
    if rank == 0:
        raise BadMagicError("magic declares rank 0")
    header_len = 4 + 4 * rank
    if len(buf) < header_len:
        raise TruncatedPayloadError(
            f"rank {rank} header needs {header_len} bytes, got {len(buf)}"
        )
    dims = tuple(
        int.from_bytes(buf[4 + 4 * i : 8 + 4 * i], "big") for i in range(rank)
    )
    expected = math.prod(dims)
    payload = buf[header_len:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, dims {dims} need {expected}"
        )
    if len(payload) > expected:
        raise IdxParseError(f"{len(payload) - expected} trailing bytes after payload")
    return IdxTensor(dims=dims, element_type=ElementType.U8, data=bytes(payload))


def serialize_idx(tensor: IdxTensor) -> bytes:
    """Inverse of parse_idx."""
    header = bytes([0, 0, tensor.element_type.value, len(tensor.dims)])
    header += b"".join(d.to_bytes(4, "big") for d in tensor.dims)
    return header + tensor.data


def read_idx_file(path) -> IdxTensor:
    """Read a raw or gzip-compressed IDX file."""
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return parse_idx(raw)


@dataclass(frozen=True)
class Dataset:
    """Flattened images in [0, 1] with integer labels in [0, num_classes)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split_tag: Split

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2:
            raise InvalidInputError(f"images must be (N, D), got shape {images.shape}")
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise InvalidInputError(
                f"labels shape {labels.shape} does not match images {images.shape}"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise InvalidInputError("pixels must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels outside [0, {self.num_classes})")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def input_dim(self) -> int:
        return self.images.shape[1]


def load_emnist_letters(images_path, labels_path, transpose: bool = True,
                        split_tag: Split = Split.TRAIN) -> Dataset:
    """Load an EMNIST-Letters style pair of IDX files.

    Source labels 1..26 are remapped to 0..25 and pixels scaled by 1/255.
    EMNIST distributes images transposed relative to MNIST, so `transpose`
    defaults on and flips each image back to natural orientation before
    flattening.
    """
    images = read_idx_file(images_path)
    labels = read_idx_file(labels_path)
    if len(images.dims) != 3:
        raise DataIntegrityError(f"images file must be rank 3, got dims {images.dims}")
    if len(labels.dims) != 1:
        raise DataIntegrityError(f"labels file must be rank 1, got dims {labels.dims}")
    n, h, w = images.dims
    if labels.dims[0] != n:
        raise DataIntegrityError(f"{n} images but {labels.dims[0]} labels")
    if n == 0:
        raise DataIntegrityError("empty dataset")

    raw_labels = np.frombuffer(labels.data, dtype=np.uint8).astype(np.int64)
    if raw_labels.min() < 1 or raw_labels.max() > LETTERS_CLASSES:
        raise DataIntegrityError(
            f"labels must lie in 1..{LETTERS_CLASSES}, "
            f"got range {raw_labels.min()}..{raw_labels.max()}"
        )
    arr = np.frombuffer(images.data, dtype=np.uint8).reshape(n, h, w)
    if transpose:
        arr = arr.transpose(0, 2, 1)
    pixels = arr.reshape(n, h * w).astype(np.float64) / 255.0
    remapped = raw_labels - 1

    counts = np.bincount(remapped, minlength=LETTERS_CLASSES)
    log.info(
        "loaded %d letter samples (%dx%d, transpose=%s); class histogram: %s",
        n, h, w, transpose, counts.tolist(),
    )
    return Dataset(images=pixels, labels=remapped, num_classes=LETTERS_CLASSES,
                   split_tag=split_tag)


def _take(dataset: Dataset, idx: np.ndarray, tag: Split) -> Dataset:
    return Dataset(
        images=dataset.images[idx],
        labels=dataset.labels[idx],
        num_classes=dataset.num_classes,
        split_tag=tag,
    )


def split(dataset: Dataset, val_fraction: float, seed: int):
    """Seeded disjoint-exhaustive partition into (train, val).

    The validation side gets floor(N * val_fraction) samples.
    """
    if not 0.0 < val_fraction < 1.0:
        raise InvalidConfigError(f"val_fraction {val_fraction!r} outside (0, 1)")
    n = len(dataset)
    if n < 2:
        raise InvalidInputError("need at least 2 samples to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * val_fraction))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return _take(dataset, train_idx, Split.TRAIN), _take(dataset, val_idx, Split.VAL)


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded subset of n samples without replacement."""
    if not 0 < n <= len(dataset):
        raise InvalidConfigError(f"cannot take {n} of {len(dataset)} samples")
    idx = np.sort(np.random.default_rng(seed).choice(len(dataset), size=n, replace=False))
    return _take(dataset, idx, dataset.split_tag)
