"""Overlap metrics on binary masks."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def _pair(pred, gt):
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def iou(pred_mask, gt_mask) -> float:
    """Intersection over union; two empty masks score 1.0."""
    pred, gt = _pair(pred_mask, gt_mask)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def dice(pred_mask, gt_mask) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    pred, gt = _pair(pred_mask, gt_mask)
    total = np.count_nonzero(pred) + np.count_nonzero(gt)
    if total == 0:
        return 1.0
    return 2 * np.count_nonzero(pred & gt) / total


def binarize(heatmap, threshold: float = 0.5) -> np.ndarray:
    """``1`` where ``heatmap >= threshold``."""
    return (np.asarray(heatmap) >= threshold).astype(np.uint8)
