"""Confusion-matrix accumulation and segmentation metrics.

The emitted CSV uses a long format, one metric per row::

    metric,class_index,class_name,value
    f1,0,background,0.981250
    iou,0,background,0.963134
    ...
    mean_f1,,,0.912345
    mean_iou,,,0.843210
    overall_accuracy,,,0.934500

Values are fixed six-decimal floats; the header line is stable.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CSV_HEADER = "metric,class_index,class_name,value"


@dataclass
class ConfusionMatrix:
    """c x c counts; rows are ground truth, columns are predictions."""

    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    def update(self, prediction: np.ndarray, label: np.ndarray,
               ignore_index: int | None = None) -> "ConfusionMatrix":
        prediction = np.asarray(prediction)
        label = np.asarray(label)
        if prediction.shape != label.shape:
            raise DataError(
                f"prediction {prediction.shape} and label {label.shape} shapes differ"
            )
        evaluated = np.ones(label.shape, dtype=bool)
        if ignore_index is not None:
            evaluated = label != ignore_index
        for name, arr in (("label", label), ("prediction", prediction)):
            bad = ((arr < 0) | (arr >= self.num_classes)) & evaluated
            if bad.any():
                where = tuple(int(c) for c in np.argwhere(bad)[0])
                raise DataError(
                    f"{name} value {int(arr[where])} out of range "
                    f"[0, {self.num_classes - 1}] at pixel {where}"
                )
        gt = label[evaluated].astype(np.int64)
        pred = prediction[evaluated].astype(np.int64)
        np.add.at(self.counts, (gt, pred), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DataError("cannot merge confusion matrices of different class counts")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    per_class_f1: np.ndarray      # NaN where the class is absent everywhere
    per_class_iou: np.ndarray
    overall_accuracy: float
    mean_f1: float
    mean_iou: float
    included_classes: list[int]   # classes entering the means

    def to_csv(self, class_names: list[str] | None = None) -> str:
        names = class_names or [str(i) for i in range(len(self.per_class_f1))]
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for i, (f1, iou) in enumerate(zip(self.per_class_f1, self.per_class_iou)):
            f1_s = "" if np.isnan(f1) else f"{f1:.6f}"
            iou_s = "" if np.isnan(iou) else f"{iou:.6f}"
            buf.write(f"f1,{i},{names[i]},{f1_s}\n")
            buf.write(f"iou,{i},{names[i]},{iou_s}\n")
        buf.write(f"mean_f1,,,{self.mean_f1:.6f}\n")
        buf.write(f"mean_iou,,,{self.mean_iou:.6f}\n")
        buf.write(f"overall_accuracy,,,{self.overall_accuracy:.6f}\n")
        return buf.getvalue()


def compute_metrics(cm: ConfusionMatrix,
                    report_classes: list[int] | None = None) -> MetricsReport:
    """Per-class F1/IoU plus unweighted means over classes present in ground truth.

    Classes absent from both ground truth and predictions get NaN per-class
    scores and never enter the means; ``report_classes`` restricts the means
    further (e.g. to foreground classes only).
    """
    if cm.total == 0:
        raise DataError("confusion matrix is empty; nothing was evaluated")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), np.nan)
        iou = np.where(tp + fp + fn > 0, tp / (tp + fp + fn), np.nan)
    present = counts.sum(axis=1) > 0
    included = [i for i in range(cm.num_classes) if present[i]]
    if report_classes is not None:
        included = [i for i in included if i in set(report_classes)]
    if not included:
        raise DataError("no classes left to average over")
    mean_f1 = float(np.mean([f1[i] for i in included]))
    mean_iou = float(np.mean([iou[i] for i in included]))
    oa = float(tp.sum() / counts.sum())
    return MetricsReport(f1, iou, oa, mean_f1, mean_iou, included)
