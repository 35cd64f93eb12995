"""Confusion-matrix accumulation and mIoU / mAcc evaluation with 3-fold
aggregation. Rows are ground truth, columns are predictions; IGNORE
pixels never enter the matrix.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .pano_data import IGNORE


class ConfusionMatrix:
    def __init__(self, n_classes):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, pred, labels):
        pred = np.asarray(pred)
        labels = np.asarray(labels)
        if pred.shape != labels.shape:
            raise ValueError("pred/labels shape mismatch")
        valid = labels != IGNORE
        p, g = pred[valid], labels[valid]
        if ((p < 0) | (p >= self.n_classes)).any():
            raise ValueError("prediction value out of class range")
        if ((g < 0) | (g >= self.n_classes)).any():
            raise ValueError("label value out of class range")
        idx = g.astype(np.int64) * self.n_classes + p.astype(np.int64)
        self.counts += np.bincount(idx, minlength=self.n_classes ** 2) \
            .reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self


def miou_macc(cm):
    """Class-wise IoU and accuracy, averaged over classes present in GT."""
    counts = cm.counts
    if counts.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    gt = counts.sum(axis=1).astype(np.float64)   # TP + FN
    pr = counts.sum(axis=0).astype(np.float64)   # TP + FP
    present = gt > 0
    iou = np.zeros(cm.n_classes)
    acc = np.zeros(cm.n_classes)
    denom = gt + pr - tp
    iou[present] = tp[present] / denom[present]
    acc[present] = tp[present] / gt[present]
    per_class = {c: {"iou": float(iou[c]), "acc": float(acc[c]), "present": bool(present[c])}
                 for c in range(cm.n_classes)}
    return float(iou[present].mean()), float(acc[present].mean()), per_class


def aggregate_folds(per_fold):
    """Unweighted mean of (mIoU, mAcc) over exactly three folds."""
    if len(per_fold) != 3:
        raise ValueError(f"expected 3 fold results, got {len(per_fold)}")
    mious, maccs = zip(*per_fold)
    return float(np.mean(mious)), float(np.mean(maccs))


def write_report(cm, out_dir, fold=None, class_names=None):
    """Emit the per-class CSV table and a JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    miou, macc, per_class = miou_macc(cm)
    names = class_names or [f"class_{c}" for c in range(cm.n_classes)]
    with open(out_dir / "per_class_metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "class_name", "iou", "acc", "present"])
        for c, row in per_class.items():
            writer.writerow([c, names[c], row["iou"], row["acc"], row["present"]])
    summary = {"miou": miou, "macc": macc, "per_class": per_class, "fold": fold}
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2))
    return summary
