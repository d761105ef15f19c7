"""Dataset ingestion: CIFAR-10 binary records, a deterministic synthetic set,
horizontal-flip augmentation and seeded batch iteration.

CIFAR-10 binary format: records of 3073 bytes, one label byte followed by
3072 pixel bytes (R plane, G plane, B plane, each 32x32 row-major). Pixels
are scaled by 1/255 on load; synthetic images are generated on the same
1/255 grid so encode/decode round trips are byte-exact.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR_CLASSES = 10

DATA_DIR_ENV = "SPMX_DATA_DIR"


@dataclass
class Dataset:
    """Images (n, 3, H, W) float32 in [0,1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be rank 4, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("labels must be one per image")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")

    @property
    def n(self):
        return self.images.shape[0]

    def subset(self, indices):
        return Dataset(self.images[indices], self.labels[indices], self.classes)


def _decode_records(raw):
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise FormatError(
            f"file length {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) >= CIFAR_CLASSES:
        raise DataError(f"label {labels.max()} out of range for CIFAR-10")
    images = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return images.astype(np.float32) / 255.0, labels


def load_cifar_binary(path):
    """Load one CIFAR-10 .bin file, or every *.bin under a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise FormatError(f"no .bin files under {path}")
    else:
        files = [path]
    images, labels = [], []
    for f in files:
        im, lb = _decode_records(f.read_bytes())
        images.append(im)
        labels.append(lb)
    return Dataset(np.concatenate(images), np.concatenate(labels), CIFAR_CLASSES)


def save_cifar_binary(dataset, path):
    """Write a dataset back out as CIFAR-10 binary records."""
    if dataset.classes > CIFAR_CLASSES:
        raise DataError("CIFAR binary records hold labels 0-9 only")
    if dataset.images.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise DataError(f"records must be (3,{CIFAR_SIDE},{CIFAR_SIDE}) images")
    rec = np.empty((dataset.n, RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = dataset.labels
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    rec[:, 1:] = pixels.reshape(dataset.n, -1)
    Path(path).write_bytes(rec.tobytes())


def default_data_dir():
    root = os.environ.get(DATA_DIR_ENV)
    return Path(root) if root else None


def synthetic_dataset(seed, n, classes, size=32, noise=0.1):
    """Axis-aligned gradient patterns per class plus seeded uniform noise.

    Class c uses orientation c mod 4 (left/right/top/bottom ramps) and an
    intensity offset stepping with c // 4. Pixels are quantized to the 1/255
    grid, so synthetic sets survive the CIFAR binary round trip byte-exactly.
    """
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if not 0.0 <= noise <= 0.1:
        raise ConfigError("noise amplitude must lie in [0, 0.1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    ramp = np.linspace(0.0, 1.0, size, dtype=np.float64)
    bases = []
    levels = max(1, -(-classes // 4))  # ceil(classes / 4)
    for c in range(classes):
        o = c % 4
        if o == 0:
            r = np.broadcast_to(ramp, (size, size))
        elif o == 1:
            r = np.broadcast_to(ramp[::-1], (size, size))
        elif o == 2:
            r = np.broadcast_to(ramp[:, None], (size, size))
        else:
            r = np.broadcast_to(ramp[::-1, None], (size, size))
        offset = 0.15 + 0.2 * (c // 4) / levels
        bases.append(offset + 0.5 * r)
    labels = np.arange(n, dtype=np.int64) % classes
    images = np.empty((n, 3, size, size), dtype=np.float64)
    for i in range(n):
        base = bases[labels[i]]
        jitter = rng.uniform(-noise, noise, size=(size, size))
        images[i] = base + jitter  # same pattern on all three channels
    images = np.round(images * 255.0) / 255.0
    return Dataset(images.astype(np.float32), labels, classes)


def hflip(images):
    """Mirror the column axis; accepts one image (c,h,w) or a batch."""
    return np.ascontiguousarray(images[..., ::-1])


def augment_hflip(image, rng):
    """Flip with probability 1/2 drawn from rng; label is untouched."""
    return hflip(image) if rng.random() < 0.5 else image


def batches(dataset, batch_size, seed=None, shuffle=False, augment=False):
    """Yield (images, labels) batches; the final partial batch is emitted.

    With a seed, the epoch permutation and per-sample flip coins are drawn
    from one Generator, so a given (dataset, seed) replays identically.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed if seed is not None else 0))
    order = rng.permutation(dataset.n) if shuffle else np.arange(dataset.n)
    for lo in range(0, dataset.n, batch_size):
        idx = order[lo:lo + batch_size]
        imgs = dataset.images[idx]
        if augment:
            flips = rng.random(len(idx)) < 0.5
            if flips.any():
                imgs = imgs.copy()
                imgs[flips] = hflip(imgs[flips])
        yield imgs, dataset.labels[idx]


def take_per_class(dataset, per_class, seed=0):
    """Deterministic class-balanced subset (first draws of a seeded shuffle)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = []
    for c in range(dataset.classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < per_class:
            raise DataError(f"class {c} has only {len(idx)} samples, need {per_class}")
        picks.append(rng.permutation(idx)[:per_class])
    return dataset.subset(np.sort(np.concatenate(picks)))
