"""Dataset ingestion for the MNIST IDX and CIFAR-10 binary formats.

MNIST pixels are scaled to [0, 1]. CIFAR-10 pixels are scaled to [0, 1] and
then centred by subtracting the per-channel mean of the loaded file; the
means are kept in ``DatasetHandle.meta`` so run artifacts can record them.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
NUM_CLASSES = 10


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class FramingError(DatasetError):
    pass


@dataclass
class DatasetHandle:
    name: str
    split: str
    x: np.ndarray | None
    y: np.ndarray | None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y) if self.y is not None else len(self.x)

    def subset(self, n):
        return DatasetHandle(self.name, self.split, self.x[:n], self.y[:n], dict(self.meta))


def _read(path) -> bytes:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, path):
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: header needs at least 8 bytes, got {len(raw)}")
    magic = int.from_bytes(raw[:4], "big")
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: expected {header} header bytes, got {len(raw)}")
    dims = [int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim)]
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise DimensionMismatchError(
            f"{path}: header dims {dims} imply {expected} bytes but file has {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    return magic, data


def load_idx(path, labels_path=None, name="mnist", split="train") -> DatasetHandle:
    """Read an IDX image file (and optionally its label file).

    A label file alone may also be passed as ``path``; the handle then has
    ``x = None``.
    """
    magic, data = _parse_idx(_read(path), path)
    x = y = None
    if magic == IDX_IMAGES_MAGIC:
        x = data.astype(np.float32) / 255.0
    else:
        y = data
    if labels_path is not None:
        lmagic, labels = _parse_idx(_read(labels_path), labels_path)
        if lmagic != IDX_LABELS_MAGIC:
            raise BadMagicError(f"{labels_path}: expected an IDX label file")
        y = labels
    if y is not None:
        if y.size and int(y.max()) >= NUM_CLASSES:
            raise LabelRangeError(f"label {int(y.max())} outside [0, {NUM_CLASSES})")
        y = y.astype(np.int64)
    if x is not None and y is not None and len(x) != len(y):
        raise DimensionMismatchError(f"{len(x)} images but {len(y)} labels")
    return DatasetHandle(name, split, x, y, {"source": str(path), "scale": "x/255"})


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist(root, split="train") -> DatasetHandle:
    images, labels = MNIST_FILES[split]
    h = load_idx(os.path.join(root, images), os.path.join(root, labels), "mnist", split)
    if h.x.shape[1:] != (28, 28):
        raise DimensionMismatchError(f"MNIST images must be 28x28, got {h.x.shape[1:]}")
    h.x = h.x.reshape(len(h.x), 784)
    return h


def load_cifar10(path, split="train", channel_mean=None) -> DatasetHandle:
    """Read one or more CIFAR-10 binary batch files (``path`` may be a list).

    ``channel_mean`` overrides the per-channel mean subtracted from the
    pixels; pass the training mean when loading the test batch.
    """
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    chunks = []
    for p in paths:
        raw = _read(p)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FramingError(
                f"{p}: {len(raw)} bytes is not a multiple of the {CIFAR_RECORD}-byte record")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(chunks)
    y = rec[:, 0].astype(np.int64)
    if y.size and y.max() >= NUM_CLASSES:
        raise LabelRangeError(f"label {int(y.max())} outside [0, {NUM_CLASSES})")
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    mean = x.mean(axis=(0, 2, 3)) if channel_mean is None else np.asarray(channel_mean, np.float32)
    x -= mean.reshape(1, 3, 1, 1)
    meta = {"source": [str(p) for p in paths], "scale": "x/255", "channel_mean": mean.tolist()}
    return DatasetHandle("cifar10", split, x, y, meta)
