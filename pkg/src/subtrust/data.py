"""Dataset handling: IDX files, stratified minibatches, sub-minibatch splits,
and a synthetic Gaussian-blob fallback for machines without the real data.
"""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .netcore import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX content (bad magic, bad dimensions)."""


class SamplingError(RuntimeError):
    """A class pool is too small for the requested draw."""


class SplitError(ValueError):
    """A batch cannot be partitioned as requested."""


@dataclass
class Dataset:
    """Feature matrix plus integer labels, indexed by class for sampling."""

    inputs: np.ndarray
    labels: np.ndarray
    class_index: list = field(default_factory=list)

    @classmethod
    def build(cls, inputs, labels, n_classes=None):
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] != labels.shape[0]:
            raise ConfigError("inputs/labels shape mismatch")
        if not np.all(np.isfinite(inputs)):
            raise ConfigError("non-finite features")
        if labels.min() < 0:
            raise ConfigError("negative class label")
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        elif labels.max() >= n_classes:
            raise ConfigError("label outside declared class range")
        class_index = [np.flatnonzero(labels == c) for c in range(n_classes)]
        return cls(inputs=inputs, labels=labels, class_index=class_index)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    @property
    def n_classes(self):
        return len(self.class_index)

    def subset(self, limit):
        """Contiguous head of the dataset (used for desk-scale runs)."""
        if limit is None or limit >= self.n:
            return self
        return Dataset.build(self.inputs[:limit], self.labels[:limit],
                             n_classes=self.n_classes)


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count, path):
    data = fh.read(count)
    if len(data) != count:
        raise EOFError(f"truncated IDX file {path}: wanted {count} bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path):
    """Parse a big-endian IDX image/label pair into a Dataset.

    Pixels are scaled from {0..255} to [0, 1].  Gzip-compressed files are
    accepted transparently.
    """
    with _open_maybe_gzip(images_path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(
                f"bad images magic 0x{magic:08x} in {images_path}, "
                f"expected 0x{IMAGES_MAGIC:08x}"
            )
        pixels = np.frombuffer(_read_exact(fh, n * rows * cols, images_path), dtype=np.uint8)
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(
                f"bad labels magic 0x{magic:08x} in {labels_path}, "
                f"expected 0x{LABELS_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(fh, n_labels, labels_path), dtype=np.uint8)
    if n != n_labels:
        raise ValueError(f"images/labels count mismatch: {n} vs {n_labels}")
    inputs = pixels.astype(np.float64).reshape(n, rows * cols) / 255.0
    return Dataset.build(inputs, labels.astype(np.int64))


def write_idx(images_u8, labels, images_path, labels_path):
    """Write byte-valued images (n, rows, cols) and labels to IDX files.

    Paths ending in .gz are gzip-compressed.  Together with load_idx this
    round-trips bit-exactly.
    """
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels)
    if images_u8.ndim == 2:
        images_u8 = images_u8[:, None, :]
    n, rows, cols = images_u8.shape
    if labels.shape != (n,):
        raise ConfigError("labels must be one per image")

    opener = gzip.open if str(images_path).endswith(".gz") else open
    with opener(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(images_u8.tobytes())
    opener = gzip.open if str(labels_path).endswith(".gz") else open
    with opener(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, n))
        fh.write(labels.astype(np.uint8).tobytes())


@dataclass
class SamplerConfig:
    """Minibatch sampling setup; sub_count is the number of weight layers."""

    minibatch_size: int
    sub_count: int
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size < 1 or self.sub_count < 1:
            raise ConfigError("minibatch_size and sub_count must be positive")
        if self.minibatch_size < self.sub_count:
            raise ConfigError("minibatch_size must be at least sub_count")


def stratified_minibatch(dataset, cfg, rng):
    """Draw an equal number of samples per class, without replacement,
    then shuffle the order.  Deterministic for a fixed generator state."""
    n_classes = dataset.n_classes
    if cfg.minibatch_size % n_classes != 0:
        raise ConfigError(
            f"minibatch_size {cfg.minibatch_size} not divisible by {n_classes} classes"
        )
    per_class = cfg.minibatch_size // n_classes
    picks = []
    for c, pool in enumerate(dataset.class_index):
        if len(pool) < per_class:
            raise SamplingError(
                f"class {c} has only {len(pool)} samples, need {per_class}"
            )
        picks.append(rng.choice(pool, size=per_class, replace=False))
    idx = np.concatenate(picks)
    rng.shuffle(idx)
    return Batch(dataset.inputs[idx], dataset.labels[idx], indices=idx)


def split_subminibatches(batch, sub_count):
    """Partition a batch into sub_count parts with sizes differing by at most
    one, spreading every class across the parts as evenly as divisibility
    allows.  Deterministic: samples of each class are dealt round-robin with
    a cursor that never resets between classes."""
    if batch.n < sub_count:
        raise SplitError(f"batch of {batch.n} cannot be split {sub_count} ways")
    parts = [[] for _ in range(sub_count)]
    cursor = 0
    for c in np.unique(batch.targets):
        for pos in np.flatnonzero(batch.targets == c):
            parts[cursor % sub_count].append(int(pos))
            cursor += 1
    out = []
    for members in parts:
        sel = np.asarray(members, dtype=np.int64)
        out.append(
            Batch(
                batch.inputs[sel],
                batch.targets[sel],
                indices=None if batch.indices is None else batch.indices[sel],
            )
        )
    return out


def synth_gaussian(classes, per_class, dim, spread, seed, noise=None):
    """Synthetic dataset: class c is an isotropic Gaussian blob whose mean is
    the c-th coordinate vertex scaled by `spread`.

    The default noise scale is spread / 10, so spread alone controls the
    whole configuration (spread 0 collapses every sample onto its mean) while
    keeping the blobs well separated.
    """
    if classes < 2:
        raise ConfigError("need at least two classes")
    if per_class < 1:
        raise ConfigError("need at least one sample per class")
    if dim < classes:
        raise ConfigError("dim must be at least the class count (one vertex per class)")
    if noise is None:
        noise = spread / 10.0
    rng = np.random.default_rng(seed)
    n = classes * per_class
    inputs = np.empty((n, dim))
    labels = np.empty(n, dtype=np.int64)
    # rows interleave the classes (0,1,..,C-1,0,1,..) so that any contiguous
    # head of the dataset stays class balanced
    for c in range(classes):
        mean = np.zeros(dim)
        mean[c] = spread
        rows = np.arange(c, n, classes)
        inputs[rows] = mean + noise * rng.standard_normal((per_class, dim))
        labels[rows] = c
    return Dataset.build(inputs, labels, n_classes=classes)
