"""Continual-learning metrics, analysis protocols and report writers.

Everything here works post hoc on :class:`~mire.trainer.Snapshot` objects and
held-out data; nothing is retrained except in :func:`forward_transfer_gaps`'
caller, which supplies an already trained extractor.
"""

import csv
import io
import json

import numpy as np
from scipy import stats

from .classifier import ClassMeans, evaluate, true_means
from .model import init_parameters


def _check_matrix(acc):
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] != acc.shape[1]:
        raise ValueError("accuracy matrix must be square")
    T = acc.shape[0]
    low = acc[np.tril_indices(T)]
    if np.any(np.isnan(low)):
        raise ValueError("accuracy matrix must be complete on and below the diagonal")
    if np.any((low < 0) | (low > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    return acc


def average_accuracy(acc):
    """Mean accuracy over all tasks after the last one has been learned."""
    acc = _check_matrix(acc)
    return float(np.mean(acc[-1]))


def average_forgetting(acc):
    """Mean over earlier tasks of (best accuracy before the end) - (final accuracy).

    Negative per-task values (backward transfer) are kept as they are.
    """
    acc = _check_matrix(acc)
    T = acc.shape[0]
    if T < 2:
        raise ValueError("forgetting needs at least two tasks")
    drops = [np.max(acc[i:T - 1, i]) - acc[T - 1, i] for i in range(T - 1)]
    return float(np.mean(drops))


def extractor_from_params(model_cfg, params):
    ext = init_parameters(model_cfg, model_cfg.seed)
    ext.load_arrays(params)
    return ext


def forward_transfer_gaps(extractor, eval_sets, task_classes):
    """Accuracy of task 1 minus accuracy of every later task.

    Each task is classified within its own classes by nearest true mean, the
    means being computed from the held-out samples themselves.
    """
    if len(task_classes) < 2:
        raise ValueError("need at least two tasks")
    accs = []
    for classes in task_classes:
        means = true_means(extractor, eval_sets, classes)
        _, acc = evaluate(means, eval_sets, extractor, classes)
        accs.append(acc)
    return [accs[0] - a for a in accs[1:]]


def class_mean_error(snapshots, eval_sets, model_cfg):
    """Mean distance between true and estimated class means per snapshot and mode.

    Returns rows ``{"task", "iteration", "mode", "error"}``; true means come
    from the held-out features under the snapshot's extractor.
    """
    rows = []
    for snap in snapshots:
        ext = extractor_from_params(model_cfg, snap.params)
        for mode in sorted(snap.means):
            est = snap.means[mode]
            truth = true_means(ext, eval_sets, est.classes).as_dict()
            err = [np.linalg.norm(truth[c] - m) for c, m in est.as_dict().items()]
            rows.append({"task": snap.task, "iteration": snap.iteration,
                         "mode": est.provenance, "error": float(np.mean(err))})
    return rows


def mean_error_between(estimate, truth):
    """Mean Euclidean error between two :class:`ClassMeans` over the estimate's classes."""
    t = truth.as_dict()
    return float(np.mean([np.linalg.norm(t[c] - m) for c, m in estimate.as_dict().items()]))


def feature_variance_track(snapshots, eval_sets, model_cfg, classes=None):
    """``(classes, matrix)`` of dimension-averaged feature variance per class and snapshot."""
    if not snapshots:
        raise ValueError("need at least one snapshot")
    classes = sorted(eval_sets) if classes is None else list(classes)
    out = np.zeros((len(classes), len(snapshots)))
    for j, snap in enumerate(snapshots):
        ext = extractor_from_params(model_cfg, snap.params)
        for i, c in enumerate(classes):
            out[i, j] = ext.features_array(eval_sets[c]).var(axis=0).mean()
    return classes, out


def ci95_halfwidth(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(stats.t.ppf(0.975, values.size - 1) * values.std(ddof=1) / np.sqrt(values.size))


def summarize(per_seed):
    """``{name: [values...]}`` -> ``{name: {"mean", "ci95", "n"}}``."""
    return {k: {"mean": float(np.mean(v)), "ci95": ci95_halfwidth(v), "n": len(v)}
            for k, v in per_seed.items()}


SNAPSHOT_FIELDS = ("method", "seed", "snapshot", "iteration", "mean_seen_accuracy", "task_accuracies")


def snapshot_rows(method, seed, record):
    for snap in record.snapshots:
        yield {
            "method": method,
            "seed": seed,
            "snapshot": snap.task,
            "iteration": snap.iteration,
            "mean_seen_accuracy": float(np.mean(snap.accuracies)),
            "task_accuracies": ";".join(repr(float(a)) for a in snap.accuracies),
        }


def rows_to_csv(rows, fields):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def to_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


__all__ = [
    "ClassMeans", "average_accuracy", "average_forgetting", "forward_transfer_gaps",
    "class_mean_error", "mean_error_between", "feature_variance_track", "ci95_halfwidth",
    "summarize", "snapshot_rows", "rows_to_csv", "to_json", "extractor_from_params",
]
