"""Hungarian-matched pixel accuracy over a whole test set."""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

IGNORE_LABEL = 255


def confusion_matrix(pred, labels, k, ignore=IGNORE_LABEL):
    """Counts ``cm[p, t]`` of pixels predicted as cluster p with ground truth t."""
    pred = np.asarray(pred).ravel()
    labels = np.asarray(labels).ravel()
    if pred.shape != labels.shape:
        raise ValueError(f"prediction and label sizes differ: {pred.size} vs {labels.size}")
    valid = labels != ignore
    p, t = pred[valid].astype(np.int64), labels[valid].astype(np.int64)
    if p.size and (p.max() >= k or t.max() >= k or p.min() < 0 or t.min() < 0):
        raise ValueError(f"cluster or class id outside [0, {k})")
    return np.bincount(p * k + t, minlength=k * k).reshape(k, k)


def _best_total(cm):
    r, c = linear_sum_assignment(cm, maximize=True)
    return cm[r, c].sum()


def hungarian_match(cm):
    """Permutation ``perm`` (cluster i -> class perm[i]) maximizing matched counts.

    Among optimal permutations the lexicographically smallest is returned:
    rows are fixed one at a time to the smallest column that still admits an
    optimal completion.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    k = cm.shape[0]
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    exact = np.issubdtype(cm.dtype, np.integer)
    cm = cm.astype(np.int64 if exact else np.float64)
    best = _best_total(cm)
    perm = np.empty(k, dtype=np.int64)
    rows = list(range(k))
    cols = list(range(k))
    acc = 0
    for i in range(k):
        rest_rows = rows[1:]
        for j in sorted(cols):
            rest_cols = [c for c in cols if c != j]
            tail = _best_total(cm[np.ix_(rest_rows, rest_cols)]) if rest_rows else 0
            total = acc + cm[i, j] + tail
            if total == best if exact else np.isclose(total, best, rtol=0, atol=1e-9 * max(1.0, abs(best))):
                perm[i] = j
                acc += cm[i, j]
                rows = rest_rows
                cols = rest_cols
                break
        else:  # pragma: no cover - the optimum is always attainable
            raise RuntimeError("no optimal completion found")
    return perm


def brute_force_match(cm):
    """Exhaustive search over all permutations (lexicographic order, first best)."""
    cm = np.asarray(cm)
    k = cm.shape[0]
    best, best_perm = None, None
    for perm in itertools.permutations(range(k)):
        tot = cm[np.arange(k), perm].sum()
        if best is None or tot > best:
            best, best_perm = tot, perm
    return np.array(best_perm, dtype=np.int64), best


def pixel_accuracy(pred, labels, perm, ignore=IGNORE_LABEL):
    """Percentage of labelled pixels whose mapped cluster equals the label.
    Returns ``nan`` when no pixel is labelled."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    valid = labels != ignore
    n = int(valid.sum())
    if n == 0:
        return float("nan")
    mapped = np.asarray(perm)[pred[valid]]
    return 100.0 * float((mapped == labels[valid]).sum()) / n


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    permutation: np.ndarray
    n_pixels: int

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class],
            "confusion_matrix": self.confusion.tolist(),
            "permutation": self.permutation.tolist(),
            "n_pixels": self.n_pixels,
        }

    def table(self):
        k = self.confusion.shape[0]
        lines = [f"pixel accuracy: {self.accuracy:.2f}%  ({self.n_pixels} labelled pixels)"]
        lines.append("cluster -> class: " + ", ".join(f"{i}->{j}" for i, j in enumerate(self.permutation)))
        lines.append("class  accuracy")
        for c in range(k):
            v = self.per_class[c]
            lines.append(f"{c:>5}  " + ("   n/a" if np.isnan(v) else f"{v:6.2f}"))
        lines.append("confusion (rows: predicted cluster, cols: class)")
        for row in self.confusion:
            lines.append(" ".join(f"{int(x):>7d}" for x in row))
        return "\n".join(lines)


def report_from_predictions(preds, labels, k, ignore=IGNORE_LABEL) -> EvalReport:
    """Match clusters to classes using every image, then score."""
    cm = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(preds, labels):
        cm += confusion_matrix(p, t, k, ignore)
    perm = hungarian_match(cm)
    total = int(cm.sum())
    correct = int(cm[np.arange(k), perm].sum())
    acc = 100.0 * correct / total if total else float("nan")
    per_class = np.full(k, np.nan)
    for c in range(k):
        col = cm[:, c].sum()
        if col:
            per_class[c] = 100.0 * cm[np.flatnonzero(perm == c), c].sum() / col
    return EvalReport(acc, per_class, cm, perm, total)


def evaluate(model, images, labels, batch_size=16, ignore=IGNORE_LABEL) -> EvalReport:
    """Run ``model.predict`` over the set and report matched accuracy."""
    images = np.asarray(images)
    k = model.n_classes
    dtype = model.cnn.stem.conv.weight.dtype
    preds = []
    for start in range(0, len(images), batch_size):
        pred, _ = model.predict(images[start:start + batch_size].astype(dtype))
        preds.extend(pred)
    return report_from_predictions(preds, list(labels), k, ignore)
