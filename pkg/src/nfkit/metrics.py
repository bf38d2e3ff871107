"""Evaluation metrics for geometry, images, retrieval, and segmentation."""

import json
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError


def chamfer_distance(a: np.ndarray, b: np.ndarray, squared: bool = True) -> float:
    """Symmetric mean nearest-neighbor distance between two point sets.

    Default is the squared form: mean_a min_b ||a-b||^2 + mean_b min_a ||a-b||^2.
    squared=False averages plain euclidean distances instead.
    """
    a, b = _as_points(a), _as_points(b)
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    if squared:
        return float((d_ab**2).mean() + (d_ba**2).mean())
    return float(d_ab.mean() + d_ba.mean())


def f_score(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.02) -> float:
    """Harmonic mean of precision/recall at a distance threshold, in [0, 1]."""
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    pred, gt = _as_points(pred), _as_points(gt)
    d_pg, _ = cKDTree(gt).query(pred, k=1)
    d_gp, _ = cKDTree(pred).query(gt, k=1)
    precision = float((d_pg <= threshold).mean())
    recall = float((d_gp <= threshold).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) == 0:
        raise ValidationError(f"expected a non-empty (N, 3) point set, got {arr.shape}")
    return arr


def psnr(img_a: np.ndarray, img_b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; infinite for identical images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def accuracy(pred_labels, true_labels) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.size == 0:
        raise ValidationError("label arrays must be non-empty and the same shape")
    return float((pred == true).mean())


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def nearest_neighbors(embeddings: np.ndarray, k: int, exclude_self: bool = True) -> np.ndarray:
    """(N, k) indices of the nearest rows by euclidean distance."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValidationError("embeddings must be (N, D)")
    n = len(emb)
    if k < 1 or k > n - int(exclude_self):
        raise ValidationError(f"k={k} out of range for {n} rows")
    sq = ((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1)
    if exclude_self:
        np.fill_diagonal(sq, np.inf)
    order = np.argsort(sq, axis=1, kind="stable")
    return order[:, :k]


def mean_precision_at_k(embeddings: np.ndarray, labels, k: int) -> float:
    """Mean over queries of the fraction of k nearest neighbors sharing the label (self excluded)."""
    labels = np.asarray(labels)
    idx = nearest_neighbors(embeddings, k, exclude_self=True)
    hits = labels[idx] == labels[:, None]
    return float(hits.mean())


# ---------------------------------------------------------------------------
# part segmentation
# ---------------------------------------------------------------------------


def shape_miou(pred, gt, parts) -> float:
    """Mean IoU over the class part set; parts absent from both count as 1."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.size == 0:
        raise ValidationError("pred and gt must be non-empty and the same shape")
    ious = []
    for part in parts:
        inter = int(((pred == part) & (gt == part)).sum())
        union = int(((pred == part) | (gt == part)).sum())
        ious.append(1.0 if union == 0 else inter / union)
    if not ious:
        raise ValidationError("part set is empty")
    return float(np.mean(ious))


def dataset_miou(preds, gts, shape_classes, parts_per_class) -> dict:
    """Instance mIoU (mean over shapes) and class mIoU (mean of per-class means)."""
    if not (len(preds) == len(gts) == len(shape_classes)) or not preds:
        raise ValidationError("need matching non-empty pred/gt/class lists")
    per_shape = []
    by_class: dict = {}
    for p, g, c in zip(preds, gts, shape_classes):
        v = shape_miou(p, g, parts_per_class[c])
        per_shape.append(v)
        by_class.setdefault(c, []).append(v)
    per_class = {c: float(np.mean(v)) for c, v in sorted(by_class.items(), key=lambda kv: str(kv[0]))}
    return {
        "instance_miou": float(np.mean(per_shape)),
        "class_miou": float(np.mean(list(per_class.values()))),
        "per_class": per_class,
    }


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def report_json(report: dict, path=None) -> str:
    """Deterministic JSON (sorted keys); writes to path when given."""
    text = json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        from pathlib import Path

        Path(path).write_text(text)
    return text
