"""Nearest-class-mean inference over unit feature vectors."""

from dataclasses import dataclass

import numpy as np

from .prototypes import DegenerateMeanError, corrected_mean, normalize

PROVENANCE = ("memory-mean", "corrected-prototype", "true-holdout")


@dataclass
class ClassMeans:
    classes: np.ndarray      # sorted ascending
    means: np.ndarray        # (C, e), unit rows
    provenance: str

    def __post_init__(self):
        order = np.argsort(self.classes, kind="stable")
        self.classes = np.asarray(self.classes, dtype=np.int64)[order]
        self.means = np.asarray(self.means, dtype=np.float64)[order]
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def as_dict(self):
        return {int(c): m for c, m in zip(self.classes, self.means)}


def build_means(memory, extractor, mode="ncm", prototypes=None):
    """Class means from memory as in the inference procedure.

    ``mode="ncm"`` uses the normalized average of the current features of each
    class's stored samples. ``mode="corrected"`` shifts the class prototype by
    the drift those samples show between insertion time and now. A class whose
    corrected mean degenerates falls back to the plain memory mean.
    """
    if mode not in ("ncm", "corrected"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "corrected" and prototypes is None:
        raise ValueError("corrected mode needs a prototype table")
    classes = sorted(memory.seen)
    means = []
    for c in classes:
        if not memory.slots.get(c):
            raise ValueError(f"class {c} has no memory entries and cannot be classified")
        x, z = memory.class_arrays(c)
        current = normalize(extractor.features_array(x).mean(axis=0))
        if mode == "corrected" and c in prototypes:
            try:
                current = corrected_mean(prototypes[c], normalize(z.mean(axis=0)), current)
            except DegenerateMeanError:
                pass
        means.append(current)
    prov = "corrected-prototype" if mode == "corrected" else "memory-mean"
    return ClassMeans(np.array(classes), np.array(means), prov)


def true_means(extractor, eval_sets, classes=None):
    classes = sorted(eval_sets) if classes is None else sorted(classes)
    means = [normalize(extractor.features_array(eval_sets[c]).mean(axis=0)) for c in classes]
    return ClassMeans(np.array(classes), np.array(means), "true-holdout")


def predict_features(means, feats):
    """Nearest mean in Euclidean distance; ties go to the lowest class id."""
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    d2 = (np.sum(feats ** 2, axis=1, keepdims=True) - 2.0 * feats @ means.means.T
          + np.sum(means.means ** 2, axis=1))
    return means.classes[np.argmin(d2, axis=1)]


def predict_cosine(means, feats):
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    return means.classes[np.argmax(feats @ means.means.T, axis=1)]


def predict(means, x, extractor):
    return predict_features(means, extractor.features_array(np.atleast_2d(x)))


def evaluate(means, eval_sets, extractor, classes=None):
    """Single-head accuracy over every class in ``means``.

    Returns ``(per_class, overall)`` for the classes in ``classes`` (default:
    all keys of ``eval_sets`` that ``means`` knows about).
    """
    if classes is None:
        classes = [c for c in sorted(eval_sets) if c in set(means.classes.tolist())]
    per_class, hits, total = {}, 0, 0
    for c in classes:
        pred = predict(means, eval_sets[c], extractor)
        correct = int(np.sum(pred == c))
        per_class[c] = correct / len(pred)
        hits += correct
        total += len(pred)
    if total == 0:
        raise ValueError("nothing to evaluate")
    return per_class, hits / total
