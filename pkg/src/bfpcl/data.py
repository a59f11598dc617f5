"""Datasets and class-incremental task streams.

Inputs are stored row-wise, ``(n, width)``, as they come off disk; the
trainer transposes them into the network's column convention.
"""

import gzip
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray  # (n, width)
    labels: np.ndarray  # (n,) integer class indices
    class_count: int
    image_shape: tuple = None  # (rows, cols) when loaded from IDX images

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise InvalidInputError(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} are inconsistent"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidInputError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.inputs)):
            raise InvalidInputError("inputs contain non-finite values")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def width(self):
        return self.inputs.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        return LabeledDataset(self.inputs[index], self.labels[index], self.class_count, self.image_shape)

    def where_labels(self, classes):
        return self.subset(np.flatnonzero(np.isin(self.labels, list(classes))))

    @staticmethod
    def concat(parts):
        parts = list(parts)
        return LabeledDataset(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].class_count,
            parts[0].image_shape,
        )


@dataclass(frozen=True)
class Task:
    classes: tuple
    train: LabeledDataset
    test: LabeledDataset


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple
    class_count: int = field(default=0)

    def __post_init__(self):
        seen = set()
        for t, task in enumerate(self.tasks, start=1):
            classes = set(task.classes)
            if not classes:
                raise InvalidInputError(f"task {t} has no classes")
            if classes & seen:
                raise InvalidInputError(f"task {t} shares classes {sorted(classes & seen)} with earlier tasks")
            seen |= classes
            for split in (task.train, task.test):
                if len(split) and not set(np.unique(split.labels)) <= classes:
                    raise InvalidInputError(f"task {t} contains labels outside its class set")
        if not self.class_count:
            object.__setattr__(self, "class_count", self.tasks[0].train.class_count)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def joint(self, upto=None):
        """Union of the train splits of tasks ``1..upto`` (all tasks by default)."""
        tasks = self.tasks[:upto]
        return LabeledDataset.concat(t.train for t in tasks)

    def joint_test(self, upto=None):
        return LabeledDataset.concat(t.test for t in self.tasks[:upto])


# --- IDX ------------------------------------------------------------------


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, ndim, path):
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated magic number", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(f"{path}: truncated payload, expected {size} bytes", offset=len(raw))
    if len(raw) > header + size:
        raise FormatError(f"{path}: {len(raw) - header - size} trailing bytes", offset=header + size)
    data = np.frombuffer(raw, dtype=np.uint8, offset=header, count=size)
    return dims, data.reshape(dims)


def load_idx(images_path, labels_path, class_count=10) -> LabeledDataset:
    """Read an IDX image/label file pair (optionally gzip-compressed).

    Pixels are scaled by ``1/255`` and images flattened to vectors.
    """
    dims, images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    (n_labels,), labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if n_labels != dims[0]:
        raise FormatError(f"{labels_path}: {n_labels} labels for {dims[0]} images", offset=4)
    if labels.size and labels.max() >= class_count:
        raise FormatError(f"{labels_path}: label {labels.max()} >= class count {class_count}", offset=8)
    inputs = images.reshape(dims[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(inputs, labels.astype(np.int64), class_count, tuple(dims[1:]))


def idx_bytes(ds: LabeledDataset):
    """Serialize ``ds`` back into ``(image_bytes, label_bytes)``."""
    rows, cols = ds.image_shape or (1, ds.width)
    pixels = np.rint(ds.inputs * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise InvalidInputError("inputs must lie in [0, 1] to be written as IDX")
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, len(ds), rows, cols) + pixels.astype(np.uint8).tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    return images, labels


def save_idx(ds: LabeledDataset, images_path, labels_path, compress=False):
    images, labels = idx_bytes(ds)
    for path, payload in ((images_path, images), (labels_path, labels)):
        if compress:
            payload = gzip.compress(payload, mtime=0)
        Path(path).write_bytes(payload)


_MNIST_FILES = {
    "train": ("mnist5k-train-images-idx3-ubyte.gz", "mnist5k-train-labels-idx1-ubyte.gz"),
    "test": ("mnist5k-test-images-idx3-ubyte.gz", "mnist5k-test-labels-idx1-ubyte.gz"),
}


def mnist_subset_paths(split):
    """Paths of the bundled 5000-image MNIST subset (4000 train / 1000 test)."""
    base = resources.files("bfpcl") / "_data"
    images, labels = _MNIST_FILES[split]
    return Path(str(base / images)), Path(str(base / labels))


def load_mnist_subset():
    """Return ``(train, test)`` of the bundled MNIST subset, 400/100 images per digit."""
    return tuple(load_idx(*mnist_subset_paths(split)) for split in ("train", "test"))


# --- task streams ---------------------------------------------------------


def split_by_classes(train: LabeledDataset, test: LabeledDataset, classes_per_task) -> TaskStream:
    """Consecutive blocks of ``classes_per_task`` class indices form the tasks."""
    c = train.class_count
    if classes_per_task <= 0 or c % classes_per_task:
        raise InvalidInputError(f"{c} classes are not divisible into tasks of {classes_per_task}")
    tasks = []
    for start in range(0, c, classes_per_task):
        classes = tuple(range(start, start + classes_per_task))
        tasks.append(Task(classes, train.where_labels(classes), test.where_labels(classes)))
    return TaskStream(tuple(tasks), c)


def class_means(n_classes, dim, separation, rng):
    """Class centres with pairwise distance at least ``separation``.

    Scaled basis vectors when ``n_classes <= dim`` (all distances exactly
    ``separation``), otherwise distinct hypercube vertices ``±separation/2``.
    """
    if n_classes <= dim:
        return np.eye(n_classes, dim) * (separation / np.sqrt(2.0))
    if n_classes > 2**dim:
        raise InvalidInputError(f"cannot place {n_classes} distinct vertices in {dim} dimensions")
    codes = rng.choice(2**dim, size=n_classes, replace=False)
    bits = (codes[:, None] >> np.arange(dim)) & 1
    return (2.0 * bits - 1.0) * (separation / 2.0)


def make_gaussian_tasks(T, classes_per_task, dim, separation, n_per_class, seed) -> TaskStream:
    """Isotropic unit-variance Gaussian classes split into ``T`` tasks, 80/20 train/test."""
    for name, value in (("T", T), ("classes_per_task", classes_per_task), ("dim", dim), ("n_per_class", n_per_class)):
        if int(value) <= 0:
            raise InvalidInputError(f"{name} must be positive, got {value}")
    if separation < 0:
        raise InvalidInputError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    c = T * classes_per_task
    means = class_means(c, dim, separation, rng)
    n_train = int(round(0.8 * n_per_class))
    train_x, train_y, test_x, test_y = [], [], [], []
    for k in range(c):
        x = means[k] + rng.standard_normal((n_per_class, dim))
        train_x.append(x[:n_train])
        test_x.append(x[n_train:])
        train_y.append(np.full(n_train, k))
        test_y.append(np.full(n_per_class - n_train, k))
    train = LabeledDataset(np.concatenate(train_x), np.concatenate(train_y), c)
    test = LabeledDataset(np.concatenate(test_x), np.concatenate(test_y), c)
    return split_by_classes(train, test, classes_per_task)


def batch_indices(n, batch_size, epoch_seed):
    """Seeded permutation of ``range(n)`` cut into batches; the last may be short."""
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(split: LabeledDataset, batch_size, epoch_seed):
    """Yield ``(inputs, labels)`` batches of ``split`` in seeded order."""
    for idx in batch_indices(len(split), batch_size, epoch_seed):
        yield split.inputs[idx], split.labels[idx]
