"""MNIST IDX ingestion, parity filtering, seeded subsetting and batching.

IDX layout (all integers big-endian)::

    images: magic 0x00000803, count, rows, cols, then count*rows*cols bytes
    labels: magic 0x00000801, count, then count bytes

Files ending in ``.gz`` are decompressed transparently.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConsistencyError, FormatError, LengthError, UsageError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
RNG_ALGORITHM = "numpy.random.PCG64"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images as an ``(n, rows*cols)`` float array in [0, 1] plus labels."""

    images: np.ndarray
    labels: np.ndarray
    shape: tuple = (28, 28)
    provenance: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() > 9):
            raise ConsistencyError("labels must lie in 0..9")
        images = np.asarray(self.images, dtype=np.float64)
        images = images.reshape(len(labels), -1 if len(labels) else int(np.prod(self.shape)))
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, note):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.shape,
                              self.provenance + (note,))

    @property
    def description(self) -> str:
        return "; ".join(self.provenance)


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".gz"):
        raw = gzip.decompress(raw)
    return raw


def parse_idx_images(raw: bytes):
    if len(raw) < 16:
        raise LengthError(f"image file too short for a header ({len(raw)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"image file has magic {magic}, expected {IMAGE_MAGIC}")
    need = n * rows * cols
    if len(raw) - 16 < need:
        raise LengthError(f"image payload truncated: {len(raw) - 16} of {need} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=16)
    return pixels.reshape(n, rows * cols), (rows, cols)


def parse_idx_labels(raw: bytes):
    if len(raw) < 8:
        raise LengthError(f"label file too short for a header ({len(raw)} bytes)")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"label file has magic {magic}, expected {LABEL_MAGIC}")
    if len(raw) - 8 < n:
        raise LengthError(f"label payload truncated: {len(raw) - 8} of {n} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path) -> LabeledDataset:
    pixels, shape = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    if len(pixels) != len(labels):
        raise ConsistencyError(f"{len(pixels)} images but {len(labels)} labels")
    return LabeledDataset(pixels / 255.0, labels, shape,
                          (f"idx:{Path(images_path).name}+{Path(labels_path).name}",))


def to_idx_bytes(ds: LabeledDataset):
    """Serialize back to IDX ``(image_bytes, label_bytes)``."""
    rows, cols = ds.shape
    pixels = np.rint(ds.images * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IMAGE_MAGIC, len(ds), rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    return img, lab


def find_idx_pair(data_dir, split="train"):
    """Locate the IDX files for ``split`` in ``data_dir`` (plain or gzipped)."""
    found = []
    for stem in MNIST_FILES[split]:
        for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                     stem.replace("-idx", ".idx") + ".gz"):
            p = Path(data_dir) / cand
            if p.exists():
                found.append(p)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")
    return tuple(found)


def load_mnist(data_dir, split="train") -> LabeledDataset:
    ds = load_idx(*find_idx_pair(data_dir, split))
    return LabeledDataset(ds.images, ds.labels, ds.shape, (f"mnist:{split}",))


def filter_parity(ds: LabeledDataset, parity: str) -> LabeledDataset:
    if parity not in ("even", "odd"):
        raise UsageError(f"parity must be 'even' or 'odd', not {parity!r}")
    want = 0 if parity == "even" else 1
    return ds.subset(np.flatnonzero(ds.labels % 2 == want), f"parity={parity}")


def permutation(seed, n: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def shuffle_take(ds: LabeledDataset, seed, count: int) -> LabeledDataset:
    if count > len(ds):
        raise UsageError(f"cannot take {count} items from a dataset of {len(ds)}")
    if count < 0:
        raise UsageError("count must be non-negative")
    idx = permutation(seed, len(ds))[:count]
    return ds.subset(idx, f"shuffle_take(seed={seed}, count={count})")


def epoch_order(n: int, epoch: int, epoch_seed) -> np.ndarray:
    return np.random.default_rng([int(epoch_seed), int(epoch)]).permutation(n)


def batch_indices(n: int, batch_size: int, epoch_seed, epoch: int = 0):
    """Index arrays for one epoch; the final short batch is kept."""
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    order = epoch_order(n, epoch, epoch_seed)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def batches(ds: LabeledDataset, batch_size: int, epoch_seed, epochs=None):
    """Yield image batches, reshuffling every epoch; runs forever if ``epochs`` is None."""
    epoch = 0
    while epochs is None or epoch < epochs:
        for idx in batch_indices(len(ds), batch_size, epoch_seed, epoch):
            yield ds.images[idx]
        epoch += 1


def step_batches(n: int, batch_size: int, epoch_seed, steps: int):
    """Exactly ``steps`` index batches drawn from consecutive epochs."""
    done, epoch = 0, 0
    while done < steps:
        for idx in batch_indices(n, batch_size, epoch_seed, epoch):
            yield idx
            done += 1
            if done == steps:
                return
        epoch += 1
