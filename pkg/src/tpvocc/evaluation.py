"""Confusion-matrix accumulation and masked mean IoU.

Counting runs over visible voxels only. The free class (when configured)
takes part in the confusion counts but is excluded from the mIoU mean,
which averages TP / (TP + FP + FN) over the semantic classes that appear
in either prediction or truth; classes absent from both are skipped
rather than scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import classes
from .errors import DataError


@dataclass
class EvalReport:
    """Mergeable L x L confusion counts (rows = truth, cols = prediction).

    ``free_class`` defaults to the last class id; pass ``None`` to score
    every class as semantic.
    """

    num_classes: int
    free_class: int | None = -1
    confusion: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError(f"need >= 2 classes, got {self.num_classes}")
        if self.free_class == -1:
            self.free_class = self.num_classes - 1
        if self.free_class is not None and not (
                0 <= self.free_class < self.num_classes):
            raise DataError(f"free class {self.free_class} out of range")
        if self.confusion is None:
            self.confusion = np.zeros(
                (self.num_classes, self.num_classes), dtype=np.int64)
        else:
            self.confusion = np.asarray(self.confusion, dtype=np.int64)
            if self.confusion.shape != (self.num_classes, self.num_classes):
                raise DataError(
                    f"confusion shape {self.confusion.shape} != "
                    f"({self.num_classes}, {self.num_classes})"
                )

    @property
    def visible_voxels(self) -> int:
        return int(self.confusion.sum())


def accumulate(report: EvalReport, pred: np.ndarray, truth: np.ndarray,
               visible: np.ndarray) -> EvalReport:
    """Count every visible voxel into ``confusion[truth, pred]``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    visible = np.asarray(visible, dtype=bool)
    if pred.shape != truth.shape or visible.shape != truth.shape:
        raise DataError(
            f"shape mismatch: pred {pred.shape}, truth {truth.shape}, "
            f"mask {visible.shape}"
        )
    p = pred[visible]
    t = truth[visible]
    L = report.num_classes
    if p.size:
        if p.min() < 0 or p.max() >= L or t.min() < 0 or t.max() >= L:
            raise DataError(f"labels out of range [0, {L})")
        flat = t.astype(np.int64) * L + p.astype(np.int64)
        report.confusion += np.bincount(flat, minlength=L * L).reshape(L, L)
    return report


def merge(a: EvalReport, b: EvalReport) -> EvalReport:
    if a.num_classes != b.num_classes or a.free_class != b.free_class:
        raise DataError("reports disagree on class layout")
    return EvalReport(
        num_classes=a.num_classes,
        free_class=a.free_class,
        confusion=a.confusion + b.confusion,
    )


def per_class_iou(report: EvalReport) -> dict[int, float]:
    """IoU per semantic class that has any support (TP + FP + FN > 0)."""
    conf = report.confusion
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    out = {}
    for c in range(report.num_classes):
        if c == report.free_class:
            continue
        denom = int(tp[c] + fp[c] + fn[c])
        if denom > 0:
            out[c] = float(tp[c]) / denom
    return out


def miou(report: EvalReport) -> float:
    """Mean IoU over the semantic classes present in pred or truth."""
    if report.visible_voxels == 0:
        raise DataError("empty report: nothing was accumulated")
    ious = per_class_iou(report)
    if not ious:
        return 0.0
    return float(np.mean(list(ious.values())))


def report_to_dict(report: EvalReport,
                   class_names: tuple[str, ...] | None = None) -> dict:
    if class_names is None and report.num_classes == classes.NUM_CLASSES:
        class_names = classes.CLASS_NAMES
    ious = per_class_iou(report)
    named = {
        (class_names[c] if class_names else str(c)): iou
        for c, iou in sorted(ious.items())
    }
    return {
        "miou": miou(report),
        "per_class": named,
        "visible_voxels": report.visible_voxels,
    }


def save_report(path, report: EvalReport,
                class_names: tuple[str, ...] | None = None) -> None:
    with open(path, "w") as f:
        json.dump(report_to_dict(report, class_names), f, indent=2)
