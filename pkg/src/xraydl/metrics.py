"""Confusion matrices, classification reports, model evaluation and history CSV."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import ops
from .errors import UsageError
from .models import ModelSpec, ParamStore, forward_model, predict_classes
from .persist import atomic_write_bytes


@dataclass
class ConfusionMatrix:
    class_names: list
    counts: np.ndarray  # rows = true class, columns = predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.class_names)
        for row in self.counts:
            w.writerow([int(v) for v in row])
        return buf.getvalue()


def confusion(true: Sequence[int], pred: Sequence[int], num_classes: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    if len(true) != len(pred):
        raise UsageError(f"label lists differ in length: {len(true)} vs {len(pred)}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true, pred):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise UsageError(f"label pair ({t}, {p}) outside 0..{num_classes - 1}")
        counts[t, p] += 1
    names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
    if len(names) != num_classes:
        raise UsageError(f"{len(names)} class names for {num_classes} classes")
    return ConfusionMatrix(names, counts)


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    classes: list
    accuracy: float
    total: int
    macro: tuple  # (precision, recall, f1)
    weighted: tuple

    def __getitem__(self, name) -> ClassMetrics:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        """Key-value layout written as report.json."""
        return {
            "classes": {c.name: {"precision": c.precision, "recall": c.recall,
                                 "f1-score": c.f1, "support": c.support} for c in self.classes},
            "class_order": [c.name for c in self.classes],
            "accuracy": self.accuracy,
            "total": self.total,
            "macro avg": dict(zip(("precision", "recall", "f1-score"), self.macro), support=self.total),
            "weighted avg": dict(zip(("precision", "recall", "f1-score"), self.weighted), support=self.total),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self, digits: int = 2) -> str:
        """Fixed-width table in the familiar precision/recall/f1-score/support layout."""
        names = [c.name for c in self.classes] + ["weighted avg"]
        width = max(len(n) for n in names)
        fmt = f"{{:.{digits}f}}"
        head = " " * width + "".join(f"{h:>11}" for h in ("precision", "recall", "f1-score", "support"))
        lines = [head, ""]
        for c in self.classes:
            vals = "".join(f"{fmt.format(v):>11}" for v in (c.precision, c.recall, c.f1))
            lines.append(f"{c.name:>{width}}{vals}{c.support:>11}")
        lines.append("")
        lines.append(f"{'accuracy':>{width}}{'':>22}{fmt.format(self.accuracy):>11}{self.total:>11}")
        for label, agg in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            vals = "".join(f"{fmt.format(v):>11}" for v in agg)
            lines.append(f"{label:>{width}}{vals}{self.total:>11}")
        return "\n".join(lines) + "\n"


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def _f1(p, r) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    counts = np.asarray(cm.counts)
    total = int(counts.sum())
    if total < 1:
        raise UsageError("classification report needs at least one sample")
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    classes = []
    for i, name in enumerate(cm.class_names):
        p = _ratio(diag[i], col[i])
        r = _ratio(diag[i], row[i])
        classes.append(ClassMetrics(name, p, r, _f1(p, r), int(row[i])))
    k = len(classes)
    macro = tuple(math.fsum(getattr(c, a) for c in classes) / k for a in ("precision", "recall", "f1"))
    weighted = tuple(math.fsum(getattr(c, a) * c.support for c in classes) / total
                     for a in ("precision", "recall", "f1"))
    return ClassificationReport(classes, _ratio(diag.sum(), total), total, macro, weighted)


def evaluate_model(spec: ModelSpec, params: ParamStore, batches: Iterable,
                   class_names: Optional[Sequence[str]] = None) -> tuple:
    """Infer-mode pass over ``batches``: (loss, accuracy, ConfusionMatrix, report).

    Loss is the sample-weighted mean of per-batch cross-entropy.
    """
    true, pred = [], []
    weighted_loss, n = 0.0, 0
    for images, labels in batches:
        out, _ = forward_model(spec, params, images, "infer")
        loss = ops.categorical_cross_entropy(out, labels.astype(out.dtype))
        b = len(labels)
        weighted_loss += float(loss.data) * b
        n += b
        true += [int(i) for i in np.argmax(labels, axis=1)]
        pred += predict_classes(out)
    if n == 0:
        raise UsageError("evaluation needs at least one batch")
    names = class_names if class_names is not None else [str(i) for i in range(spec.num_classes)]
    cm = confusion(true, pred, spec.num_classes, names)
    report = classification_report(cm)
    return weighted_loss / n, report.accuracy, cm, report


HISTORY_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


def history_csv(records: Sequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for r in records:
        # repr gives the shortest string that parses back to the same float
        w.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.train_accuracy)),
                    repr(float(r.val_loss)), repr(float(r.val_accuracy)), repr(float(r.learning_rate))])
    return buf.getvalue()


def emit_history(records: Sequence, destination) -> None:
    if not records:
        raise UsageError("no epoch records to write")
    atomic_write_bytes(destination, history_csv(records).encode("ascii"))


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HISTORY_HEADER:
        raise UsageError(f"{path}: not a history file")
    return [(int(r[0]), *map(float, r[1:])) for r in rows[1:]]
