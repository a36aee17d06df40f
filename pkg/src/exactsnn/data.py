"""Dataset loading and spike encoding.

Two containers are understood:

* IDX (MNIST family), optionally gzip-compressed: big-endian u32 magic
  (2051 images / 2049 labels), u32 dims, then u8 payload.
* A plain-text event file::

      #events v1 input_size=<N> classes=<C>
      sample <label>
      <neuron_index> <time_seconds>
      ...
      <blank line>
"""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import EventBatch

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header truncated")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{path}: magic {found}, expected {magic}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: payload has {len(raw) - header} bytes, expected {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Return ``(images [n, rows, cols] u8, labels [n] u8)``."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return images, labels


def encode_ttfs(image, t_enc: float = 0.1, x_max: int = 255) -> EventBatch:
    """One spike per non-zero pixel at ``t_enc / x_max * (x_max - x)``; black pixels stay silent."""
    flat = np.asarray(image).reshape(-1).astype(np.int64)
    if flat.size and (flat.min() < 0 or flat.max() > x_max):
        raise DataError(f"pixel values must lie in [0, {x_max}]")
    idx = np.nonzero(flat)[0]
    times = t_enc / x_max * (x_max - flat[idx])
    return EventBatch.from_unsorted(idx, times, flat.size)


@dataclass
class Dataset:
    samples: list
    input_shape: tuple
    n_classes: int
    name: str = ""

    def __post_init__(self):
        for batch, label in self.samples:
            if not 0 <= label < self.n_classes:
                raise DataError(f"label {label} outside 0..{self.n_classes - 1}")

    def __len__(self):
        return len(self.samples)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)

    def subset(self, n: Optional[int]) -> "Dataset":
        if n is None or n >= len(self.samples):
            return self
        return Dataset(self.samples[:n], self.input_shape, self.n_classes, self.name)

    def map(self, fn) -> "Dataset":
        return Dataset([(fn(b, i), y) for i, (b, y) in enumerate(self.samples)], self.input_shape,
                       self.n_classes, self.name)


def idx_dataset(images_path, labels_path, t_enc: float = 0.1, n: Optional[int] = None,
                n_classes: Optional[int] = None, channels_first: bool = False) -> Dataset:
    images, labels = load_idx(images_path, labels_path)
    classes = n_classes if n_classes is not None else int(labels.max()) + 1 if len(labels) else 0
    if n is not None:
        images, labels = images[:n], labels[:n]
    shape = (1,) + images.shape[1:] if channels_first else (int(np.prod(images.shape[1:])),)
    samples = [(encode_ttfs(img, t_enc), int(y)) for img, y in zip(images, labels)]
    return Dataset(samples, shape, classes, Path(images_path).name)


def load_event_file(path) -> Dataset:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#events v1"):
        raise DataError(f"{path}: missing '#events v1' header")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        size, classes = int(fields["input_size"]), int(fields["classes"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad header {lines[0]!r}") from exc

    samples = []
    label = None
    neurons, times = [], []

    def close():
        if label is not None:
            samples.append((EventBatch.from_unsorted(neurons, times, size), label))

    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            close()
            label, neurons, times = None, [], []
            continue
        if parts[0] == "sample":
            close()
            neurons, times = [], []
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: malformed sample line")
            try:
                label = int(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed label") from exc
            continue
        if label is None or len(parts) != 2:
            raise DataError(f"{path}:{lineno}: malformed event line {line!r}")
        try:
            n, t = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed event line {line!r}") from exc
        if not 0 <= n < size:
            raise DataError(f"{path}:{lineno}: neuron index {n} outside input size {size}")
        if not (math.isfinite(t) and t >= 0):
            raise DataError(f"{path}:{lineno}: event time must be finite and >= 0")
        neurons.append(n)
        times.append(t)
    close()
    return Dataset(samples, (size,), classes, Path(path).name)


def write_event_file(path, dataset: Dataset):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#events v1 input_size={dataset.input_size} classes={dataset.n_classes}\n")
        for batch, label in dataset.samples:
            f.write(f"sample {label}\n")
            for n, t in zip(batch.neurons.tolist(), batch.times.tolist()):
                f.write(f"{n} {t!r}\n")
            f.write("\n")


def jitter(batch: EventBatch, sigma: float, seed) -> EventBatch:
    """Add N(0, sigma^2) noise to every event time, clamp at 0, re-sort."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0 or len(batch) == 0:
        return batch
    rng = np.random.default_rng(seed)
    times = np.maximum(batch.times + rng.normal(0.0, sigma, len(batch)), 0.0)
    return EventBatch.from_unsorted(batch.neurons, times, batch.size)


def iter_batches(n: int, batch_size: int, seed: Optional[int] = None) -> Iterator[np.ndarray]:
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
