"""CIFAR-10 binary batches and the synthetic saliency set.

Both are held as uint8 images (N, 3, 32, 32) plus labels; conversion to
standardized floats happens per batch.  The synthetic set is written in the
same 3073-byte record format, with patch positions in a sidecar ``.npy``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import make_rng

RECORD = 3073
IMAGE_SHAPE = (3, 32, 32)
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = ["test_batch.bin"]
SHAPES = ("solid_square", "hollow_square", "diagonal_cross", "disk")
PATCH = 8


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # uint8 (N, 3, 32, 32)
    labels: np.ndarray  # int64 (N,)
    patches: np.ndarray | None = None  # int64 (N, 2): top-left (row, col) of the class patch

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], None if self.patches is None else self.patches[idx])


def read_records(path: str | Path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD:
        raise DataError(f"{path}: size {raw.size} is not a multiple of {RECORD} bytes")
    recs = raw.reshape(-1, RECORD)
    labels = recs[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataError(f"{path}: record {bad} has label {labels[bad]} > 9")
    return Dataset(recs[:, 1:].reshape(-1, *IMAGE_SHAPE).copy(), labels)


def write_records(path: str | Path, ds: Dataset) -> None:
    recs = np.empty((len(ds), RECORD), np.uint8)
    recs[:, 0] = ds.labels
    recs[:, 1:] = ds.images.reshape(len(ds), -1)
    recs.tofile(path)


def _concat(parts: list[Dataset]) -> Dataset:
    patches = None if any(p.patches is None for p in parts) else np.concatenate([p.patches for p in parts])
    return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), patches)


def load_cifar10(directory: str | Path, split: str = "train") -> Dataset:
    directory = Path(directory)
    names = CIFAR_TRAIN if split == "train" else CIFAR_TEST
    files = [directory / n for n in names if (directory / n).exists()]
    if not files:
        raise DataError(f"no CIFAR-10 {split} batch files in {directory}")
    return _concat([read_records(f) for f in files])


def _shape_masks() -> np.ndarray:
    yy, xx = np.mgrid[:PATCH, :PATCH]
    solid = (yy >= 1) & (yy <= 6) & (xx >= 1) & (xx <= 6)
    hollow = ((yy == 0) | (yy == PATCH - 1) | (xx == 0) | (xx == PATCH - 1))
    cross = (yy == xx) | (yy == PATCH - 1 - xx)
    disk = (yy - 3.5) ** 2 + (xx - 3.5) ** 2 <= 3.6**2
    return np.stack([solid, hollow, cross, disk])


def gen_synthetic_saliency(seed: int, n_samples: int, num_classes: int = 4) -> Dataset:
    """Uniform-noise 32x32 RGB images with one 8x8 class-defining shape.

    Labels cycle round-robin, so the class histogram is uniform to within one.
    The patch sits at a random cell of the 4x4 grid of 8x8 cells, and its
    polarity (white shape on black or black on white) is drawn at random, so
    every pixel has the same expected value under every class.
    """
    if num_classes != len(SHAPES):
        raise ValueError(f"the synthetic set defines {len(SHAPES)} classes")
    rng = make_rng(seed)
    masks = _shape_masks()
    images = rng.integers(0, 256, size=(n_samples, *IMAGE_SHAPE), dtype=np.uint8)
    labels = np.arange(n_samples, dtype=np.int64) % num_classes
    labels = labels[rng.permutation(n_samples)]
    cells = rng.integers(0, 32 // PATCH, size=(n_samples, 2))
    flips = rng.integers(0, 2, size=n_samples).astype(bool)
    patches = cells * PATCH
    for i in range(n_samples):
        patch = np.where(masks[labels[i]] ^ flips[i], 255, 0).astype(np.uint8)
        r, c = patches[i]
        images[i, :, r : r + PATCH, c : c + PATCH] = patch
    return Dataset(images, labels, patches.astype(np.int64))


def save_dataset(directory: str | Path, name: str, ds: Dataset) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.bin"
    write_records(path, ds)
    if ds.patches is not None:
        np.save(directory / f"{name}_patches.npy", ds.patches)
    return path


def load_saved(directory: str | Path, name: str) -> Dataset:
    directory = Path(directory)
    ds = read_records(directory / f"{name}.bin")
    meta = directory / f"{name}_patches.npy"
    if meta.exists():
        ds.patches = np.load(meta)
    return ds


def standardize(images: np.ndarray, mean, std, dtype=np.float32) -> np.ndarray:
    x = images.astype(dtype) / dtype(255)
    return (x - np.asarray(mean, dtype).reshape(1, 3, 1, 1)) / np.asarray(std, dtype).reshape(1, 3, 1, 1)


def augment(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip and pad-4 random crop on uint8 images."""
    n = len(images)
    flip = rng.integers(0, 2, size=n).astype(bool)
    out = images.copy()
    out[flip] = out[flip, :, :, ::-1]
    padded = np.pad(out, ((0, 0), (0, 0), (4, 4), (4, 4)))
    offs = rng.integers(0, 9, size=(n, 2))
    for i, (dy, dx) in enumerate(offs):
        out[i] = padded[i, :, dy : dy + 32, dx : dx + 32]
    return out


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index batches over ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
