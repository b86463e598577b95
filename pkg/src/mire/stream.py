"""Split-task online streams.

A :class:`SplitStream` hands the learner plain ``(x, y)`` minibatches. Where the
tasks start and end is kept on the stream object for the evaluator only; the
iterator never exposes it.
"""

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class StreamConfig:
    num_classes: int = 10
    classes_per_task: int = 2
    samples_per_class: int = 200
    input_dim: int = 16
    separation: float = 6.0
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.classes_per_task < 1:
            raise ValueError("need at least one class and one class per task")
        if self.num_classes % self.classes_per_task:
            raise ValueError("num_classes must be divisible by classes_per_task")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.samples_per_class < 1 or self.input_dim < 1:
            raise ValueError("samples_per_class and input_dim must be >= 1")

    @property
    def num_tasks(self):
        return self.num_classes // self.classes_per_task

    def task_classes(self):
        k = self.classes_per_task
        return [list(range(t * k, (t + 1) * k)) for t in range(self.num_tasks)]


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task_classes: list
    class_means: np.ndarray = None     # generating means, synthetic data only

    @property
    def num_classes(self):
        return sum(len(t) for t in self.task_classes)

    def by_class(self):
        return {c: self.x[self.y == c] for c in range(self.num_classes)}


class SplitStream:
    """Immutable sequence of minibatches; iterate it to get ``(x, y)`` pairs."""

    def __init__(self, batches, task_classes, task_ends):
        self._batches = tuple((np.array(x, dtype=np.float64), np.array(y, dtype=np.int64))
                              for x, y in batches)
        for x, y in self._batches:
            x.setflags(write=False)
            y.setflags(write=False)
        self._task_classes = [list(t) for t in task_classes]
        self._task_ends = tuple(task_ends)

    def __iter__(self):
        return iter(self._batches)

    def __len__(self):
        return len(self._batches)

    @property
    def input_dim(self):
        return self._batches[0][0].shape[1]

    @property
    def num_samples(self):
        return sum(len(y) for _, y in self._batches)

    # evaluator-side view
    def task_classes(self):
        return [list(t) for t in self._task_classes]

    def task_ends(self):
        """Index of the last minibatch of each task."""
        return list(self._task_ends)


def generate_synthetic(cfg):
    """Isotropic unit-covariance Gaussian classes around ``separation * u_c``."""
    rng = np.random.default_rng([cfg.seed, 0])
    dirs = rng.standard_normal((cfg.num_classes, cfg.input_dim))
    means = cfg.separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    n = cfg.samples_per_class
    x = np.concatenate([means[c] + rng.standard_normal((n, cfg.input_dim))
                        for c in range(cfg.num_classes)])
    y = np.repeat(np.arange(cfg.num_classes), n)
    return Dataset(x, y, cfg.task_classes(), means)


def make_stream(data, batch_size=10, seed=0):
    """Order samples task by task, shuffling within each task."""
    rng = np.random.default_rng([seed, 1])
    batches, ends = [], []
    for classes in data.task_classes:
        idx = np.flatnonzero(np.isin(data.y, classes))
        if idx.size == 0:
            raise ValueError(f"task with classes {classes} has no samples")
        idx = idx[rng.permutation(idx.size)]
        for start in range(0, idx.size, batch_size):
            sel = idx[start:start + batch_size]
            batches.append((data.x[sel], data.y[sel]))
        ends.append(len(batches) - 1)
    return SplitStream(batches, data.task_classes, ends)


def make_split_synthetic(cfg):
    return make_stream(generate_synthetic(cfg), cfg.batch_size, cfg.seed)


def holdout(data, fraction, seed=0, min_per_class=1):
    """Split off ``fraction`` of every class for evaluation.

    Returns ``(train_dataset, eval_sets)`` where ``eval_sets`` maps class id to
    an array of held-out inputs.
    """
    if not 0 < fraction <= 0.5:
        raise ValueError("holdout fraction must lie in (0, 0.5]")
    rng = np.random.default_rng([seed, 2])
    keep = np.ones(len(data.y), dtype=bool)
    eval_sets = {}
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.y == c)
        k = int(round(fraction * idx.size))
        if k < min_per_class or k >= idx.size:
            raise ValueError(f"class {c}: {idx.size} samples is too few for a "
                             f"{fraction:g} holdout")
        chosen = rng.choice(idx, size=k, replace=False)
        keep[chosen] = False
        eval_sets[c] = data.x[np.sort(chosen)]
    train = Dataset(data.x[keep], data.y[keep], data.task_classes, data.class_means)
    return train, eval_sets


def _task_groups(labels, split_spec):
    num_classes = int(labels.max()) + 1
    if isinstance(split_spec, int):
        if num_classes % split_spec:
            raise ValueError(f"{num_classes} classes do not split into tasks of {split_spec}")
        return [list(range(t, t + split_spec)) for t in range(0, num_classes, split_spec)]
    groups = [list(map(int, g)) for g in split_spec]
    flat = sorted(c for g in groups for c in g)
    if flat != list(range(num_classes)):
        raise ValueError("split_spec must list every class exactly once")
    return groups


def read_csv_dataset(path, split_spec, input_dim=None, skip_header=False):
    """Parse ``label,f1,...,fd`` rows into a :class:`Dataset`."""
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and skip_header:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0])
                feats = [float(v) for v in row[1:]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            if label < 0:
                raise ValueError(f"{path}:{lineno}: negative label {label}")
            if input_dim is None:
                input_dim = len(feats)
            if len(feats) != input_dim or input_dim == 0:
                raise ValueError(f"{path}:{lineno}: expected {input_dim} features, got {len(feats)}")
            if not all(np.isfinite(feats)):
                raise ValueError(f"{path}:{lineno}: non-finite feature")
            xs.append(feats)
            ys.append(label)
    if not ys:
        raise ValueError(f"{path}: no samples")
    y = np.array(ys, dtype=np.int64)
    present = np.unique(y)
    if not np.array_equal(present, np.arange(present.size)):
        raise ValueError(f"{path}: labels must form a contiguous 0-based range, got {present.tolist()}")
    return Dataset(np.array(xs, dtype=np.float64), y, _task_groups(y, split_spec))


def load_csv_dataset(path, split_spec, input_dim=None, skip_header=False, batch_size=10, seed=0):
    data = read_csv_dataset(path, split_spec, input_dim, skip_header)
    return make_stream(data, batch_size, seed)
