"""Accuracy, confusion matrices and per-expression accuracy reports."""

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .netspec import CLASS_NAMES


@dataclass
class ConfusionMatrix:
    """Counts with rows = true label, columns = predicted label."""

    counts: np.ndarray
    class_names: tuple = field(default=CLASS_NAMES)

    @classmethod
    def from_predictions(cls, true, pred, num_classes=7):
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(true), np.asarray(pred)), 1)
        names = CLASS_NAMES if num_classes == 7 else tuple(str(k) for k in range(num_classes))
        return cls(counts, names)

    @property
    def total(self):
        return int(self.counts.sum())

    def accuracy_fraction(self):
        return Fraction(int(np.trace(self.counts)), self.total)

    def accuracy(self):
        return int(np.trace(self.counts)) / self.total

    def most_confused(self):
        """(true, predicted, count) of the largest off-diagonal cell."""
        off = self.counts.copy()
        np.fill_diagonal(off, -1)
        r, c = np.unravel_index(np.argmax(off), off.shape)
        return int(r), int(c), int(self.counts[r, c])

    def render(self):
        w = max(len(n) for n in self.class_names) + 1
        head = " " * w + "".join(f"{n[:6]:>8}" for n in self.class_names)
        lines = [head]
        for name, row in zip(self.class_names, self.counts):
            lines.append(f"{name:<{w}}" + "".join(f"{v:>8d}" for v in row))
        return "\n".join(lines)


def predict(model, x, hog=None, batch=256):
    """Eval-mode argmax predictions; ties go to the lowest class index."""
    prev = model.mode
    model.eval()
    try:
        out = []
        for i in range(0, len(x), batch):
            h = None if hog is None else hog[i:i + batch]
            scores, _ = model.forward(x[i:i + batch], h)
            out.append(scores.argmax(axis=1))
    finally:
        model.mode = prev
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(model, dataset, hog=None, batch=256):
    if model.spec.hog_concat != (hog is not None):
        raise UsageError("HOG features must be given exactly when the model is hybrid")
    pred = predict(model, dataset.images, hog, batch)
    cm = ConfusionMatrix.from_predictions(dataset.labels, pred, model.spec.num_classes)
    return cm.accuracy(), cm


def per_class_accuracy(cm):
    """Row-normalised diagonal; classes without samples report NaN."""
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, diag / np.maximum(rows, 1), np.nan)


def write_confusion_csv(cm, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *cm.class_names])
        for name, row in zip(cm.class_names, cm.counts):
            w.writerow([name, *(int(v) for v in row)])


def read_confusion_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) != len(rows[0]):
        raise DataError(f"{path}: not a square confusion table")
    names = tuple(rows[0][1:])
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts, names)


def export_report(accuracy, cm, per_class, path, echo=True):
    """Write the confusion CSV at ``path`` plus per-class and summary files.

    Returns the paths written. The ASCII matrix goes to stdout when ``echo``.
    """
    path = Path(path)
    stem = path.with_suffix("")
    per_class_path = Path(f"{stem}_per_class.csv")
    summary_path = Path(f"{stem}_summary.txt")
    try:
        write_confusion_csv(cm, path)
        with open(per_class_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "samples", "correct", "accuracy"])
            for k, name in enumerate(cm.class_names):
                acc = per_class[k]
                w.writerow([name, int(cm.counts[k].sum()), int(cm.counts[k, k]),
                            "undefined" if np.isnan(acc) else f"{acc:.4f}"])
        t, p, n = cm.most_confused()
        summary = (
            f"accuracy {int(np.trace(cm.counts))}/{cm.total} = {100 * accuracy:.1f}%\n"
            f"most confused: {cm.class_names[t]} -> {cm.class_names[p]} ({n} samples)\n\n"
            f"{cm.render()}\n")
        summary_path.write_text(summary)
    except OSError as exc:
        raise DataError(f"cannot write report: {exc}") from None
    if echo:
        print(summary, end="")
    return [path, per_class_path, summary_path]
