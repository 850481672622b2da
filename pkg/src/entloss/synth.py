"""Synthetic letters-style datasets.

26 classes, one smooth random prototype each (a coarse seeded grid upsampled
to 28x28), samples drawn as prototype + Gaussian pixel noise. Written files
follow the real distribution's conventions (gzip IDX, labels 1..26, images
stored transposed) so the full ingestion path is exercised when no real
letter data is on disk.
"""

import gzip
from pathlib import Path

import numpy as np

from .data import Dataset, ElementType, IdxTensor, Split, serialize_idx

PROTO_STREAM = 0x50524F54
SAMPLE_STREAM = 0x53414D50


def letters_images(n: int, seed: int, num_classes: int = 26, side: int = 28,
                   grid: int = 7, noise: float = 0.5, contrast: float = 0.3,
                   sample_stream: int = 0):
    """(images u8 (n, side, side) in natural orientation, labels 1..num_classes).

    Class prototypes depend on `seed` only; samples depend additionally on
    `sample_stream`, so train/test splits share prototypes (same seed) but
    draw disjoint noise (different streams). contrast/noise are tuned so a
    small MLP lands in the low 90s after a few epochs rather than at the
    ceiling.
    """
    if side % grid != 0:
        raise ValueError(f"side {side} must be a multiple of grid {grid}")
    proto_rng = np.random.default_rng([seed, PROTO_STREAM])
    protos = proto_rng.random((num_classes, grid, grid))
    protos = 0.5 + contrast * (protos - 0.5)
    protos = np.kron(protos, np.ones((side // grid, side // grid)))

    sample_rng = np.random.default_rng([seed, SAMPLE_STREAM, sample_stream])
    labels = sample_rng.integers(1, num_classes + 1, size=n)
    images = protos[labels - 1] + noise * sample_rng.standard_normal((n, side, side))
    np.clip(images, 0.0, 1.0, out=images)
    return np.round(images * 255.0).astype(np.uint8), labels.astype(np.uint8)


def letters_dataset(n: int, seed: int, split_tag: Split = Split.TRAIN,
                    **kwargs) -> Dataset:
    """Synthetic letters directly as a Dataset (no files involved)."""
    images, labels = letters_images(n, seed, **kwargs)
    flat = images.reshape(n, -1).astype(np.float64) / 255.0
    num_classes = kwargs.get("num_classes", 26)
    return Dataset(images=flat, labels=labels.astype(np.int64) - 1,
                   num_classes=num_classes, split_tag=split_tag)


def write_letters_idx(out_dir, n: int, seed: int, stem: str = "letters-train",
                      compress: bool = True, **kwargs):
    """Write a synthetic (images, labels) IDX pair; returns the two paths.

    Images are stored transposed, matching the real files' orientation, so
    loading with transpose=True recovers letters_dataset(n, seed).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = letters_images(n, seed, **kwargs)
    side = images.shape[1]
    stored = np.ascontiguousarray(images.transpose(0, 2, 1))

    image_bytes = serialize_idx(
        IdxTensor(dims=(n, side, side), element_type=ElementType.U8, data=stored.tobytes())
    )
    label_bytes = serialize_idx(
        IdxTensor(dims=(n,), element_type=ElementType.U8, data=labels.tobytes())
    )
    suffix = ".gz" if compress else ""
    images_path = out_dir / f"{stem}-images-idx3-ubyte{suffix}"
    labels_path = out_dir / f"{stem}-labels-idx1-ubyte{suffix}"
    if compress:
        image_bytes = gzip.compress(image_bytes)
        label_bytes = gzip.compress(label_bytes)
    images_path.write_bytes(image_bytes)
    labels_path.write_bytes(label_bytes)
    return images_path, labels_path
