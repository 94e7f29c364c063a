"""Localization (IoU accuracy) and classification (AUC) metrics and reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .boxes import BoundingBox

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of half-open integer boxes."""
    iw = min(a.x1, b.x1) - max(a.x, b.x)
    ih = min(a.y1, b.y1) - max(a.y, b.y)
    inter = iw * ih if iw > 0 and ih > 0 else 0
    return inter / (a.area + b.area - inter)


@dataclass
class LocalizationRecord:
    """Predicted and ground-truth boxes of one image for one class."""

    image_id: str
    class_id: int
    gt: List[BoundingBox]
    pred: List[BoundingBox] = field(default_factory=list)

    def best_iou(self) -> float:
        return max((iou(p, g) for p in self.pred for g in self.gt), default=0.0)


def iou_accuracy(records: Sequence[LocalizationRecord], threshold: float,
                 classes: Optional[Sequence[int]] = None, strict: bool = False):
    """Per-class fraction of ground-truth images localized at ``threshold``.

    A record counts as correct when its best-matching prediction reaches
    IoU >= threshold (> with ``strict``). Returns (per-class dict, mean).
    """
    by_class: Dict[int, List[LocalizationRecord]] = {}
    for r in records:
        if r.gt:
            by_class.setdefault(r.class_id, []).append(r)
    classes = sorted(by_class) if classes is None else list(classes)
    out = {}
    for c in classes:
        recs = by_class.get(c)
        if not recs:
            raise ValueError(f"no ground truth for class {c}")
        hits = [(r.best_iou() > threshold) if strict else (r.best_iou() >= threshold) for r in recs]
        out[c] = sum(hits) / len(hits)
    mean = float(np.mean(list(out.values()))) if out else float("nan")
    return out, mean


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted 1/2; NaN unless both classes occur."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def per_class_auc(scores, labels):
    """AUC per class column; the mean skips undefined (single-class) columns."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    aucs = [roc_auc(s[:, c], y[:, c]) for c in range(s.shape[1])]
    defined = [a for a in aucs if not math.isnan(a)]
    return aucs, (float(np.mean(defined)) if defined else float("nan"))


# ------------------------------------------------------------------ reports
def _fmt(v: float, digits: int) -> str:
    return "nan" if math.isnan(v) else f"{v:.{digits}f}"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def localization_table(records, class_names: Sequence[str], thresholds=DEFAULT_THRESHOLDS,
                       model: str = "RGT", strict: bool = False):
    """Rows of (T, model, per-class accuracy..., mean), one per threshold."""
    classes = list(range(len(class_names)))
    rows = []
    for t in thresholds:
        per, mean = iou_accuracy(records, t, classes, strict)
        rows.append((t, model, [per[c] for c in classes], mean))
    return rows


def localization_report(records, class_names: Sequence[str], thresholds=DEFAULT_THRESHOLDS,
                        model: str = "RGT", strict: bool = False):
    """(csv, markdown) in the IoU-accuracy table layout."""
    table = localization_table(records, class_names, thresholds, model, strict)
    header = ["T(IoU)", "Model", *class_names, "Mean"]
    body = [[f"{t:.1f}", m, *(_fmt(v, 2) for v in vals), _fmt(mean, 3)]
            for t, m, vals, mean in table]
    return _csv([header, *body]), _markdown(header, body)


def classification_report(runs, class_names: Sequence[str], method: str = "RGT"):
    """(csv, markdown) in the AUC table layout from one or more runs.

    ``runs`` is a list of (scores, labels) pairs, one per seed; the table
    shows the across-run mean per class and its standard deviation.
    """
    per_run = np.array([per_class_auc(s, y)[0] for s, y in runs], dtype=np.float64)
    mean_per_class = per_run.mean(axis=0)
    std_per_class = per_run.std(axis=0)
    run_means = [per_class_auc(s, y)[1] for s, y in runs]
    overall = float(np.mean(run_means))
    header = ["Method", *class_names, "Mean"]
    values = [method, *(_fmt(v, 2) for v in mean_per_class), _fmt(overall, 3)]
    spread = ["", *(f"(±{_fmt(v, 2)})" for v in std_per_class), "--"]
    csv_rows = [header, values, [f"{method} std", *(_fmt(v, 2) for v in std_per_class), ""]]
    return _csv(csv_rows), _markdown(header, [values, spread])


# ------------------------------------------------------------------ files
def _class_names(doc: dict, n: int) -> List[str]:
    names = doc.get("classes")
    return list(names) if names else [f"class{i}" for i in range(n)]


def load_box_file(path):
    """``{"classes": [...], "boxes": {image_id: [box, ...]}}`` -> (names, dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "boxes" not in doc:
        raise ValueError(f"{path}: expected an object with a 'boxes' field")
    boxes = {str(k): [BoundingBox.from_json(b) for b in v] for k, v in doc["boxes"].items()}
    n = 1 + max((b.class_id for v in boxes.values() for b in v), default=-1)
    return _class_names(doc, n), boxes


def records_from_boxes(gt: Dict[str, List[BoundingBox]], pred: Dict[str, List[BoundingBox]]):
    records = []
    for image_id in sorted(gt):
        for c in sorted({b.class_id for b in gt[image_id]}):
            records.append(LocalizationRecord(
                image_id, c, [b for b in gt[image_id] if b.class_id == c],
                [b for b in pred.get(image_id, []) if b.class_id == c]))
    return records


def load_score_file(path, key: str):
    """``{"classes": [...], key: {image_id: [per-class values]}}``."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or key not in doc:
        raise ValueError(f"{path}: expected an object with a {key!r} field")
    table = {str(k): list(map(float, v)) for k, v in doc[key].items()}
    n = len(next(iter(table.values()))) if table else 0
    if any(len(v) != n for v in table.values()):
        raise ValueError(f"{path}: rows have different lengths")
    return _class_names(doc, n), table


def align(scores: Dict[str, list], labels: Dict[str, list]):
    missing = sorted(set(labels) - set(scores))
    if missing:
        raise ValueError(f"no prediction for image {missing[0]}")
    ids = sorted(labels)
    return np.array([scores[i] for i in ids]), np.array([labels[i] for i in ids]).astype(int)
