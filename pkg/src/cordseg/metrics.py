"""Segmentation and case-level evaluation measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .postprocess import Decision


@dataclass
class EvalSummary:
    ious: list[float]
    mean_iou: float
    std_iou: float
    pixel_accuracy: float | None = None
    case_accuracy: float | None = None
    degenerate_std: bool = False  # single sample, std reported as 0.0
    both_empty: int = 0  # cases scored 1.0 because pred and truth were both empty

    def iou_percent(self) -> str:
        """Mean and spread as a percent string with one decimal, e.g. '88.4 ± 3.6'."""
        return f"{100 * self.mean_iou:.1f} ± {100 * self.std_iou:.1f}"

def _check_dims(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"mask dims differ: {p.shape} vs {g.shape}")
    return p, g

def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Jaccard index |pred & gt| / |pred | gt|; 1.0 when both masks are empty."""
    p, g = _check_dims(pred, gt)
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, g).sum()) / union

def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    """Fraction of pixels where the masks agree."""
    p, g = _check_dims(pred, gt)
    return float(np.mean(p == g))

def case_accuracy(decisions: Sequence[Decision], labels: Sequence[str]) -> float:
    """Fraction of verdicts matching the given positive/negative labels."""
    if len(decisions) != len(labels):
        raise ValueError(f"{len(decisions)} decisions vs {len(labels)} labels")
    if not decisions:
        raise ValueError("no cases to score")
    hits = sum(1 for d, lab in zip(decisions, labels) if d.verdict == lab)
    return hits / len(decisions)

def summarize(
    iou_list: Sequence[float],
    decisions: Sequence[Decision] | None = None,
    labels: Sequence[str] | None = None,
    pixel_accuracies: Sequence[float] | None = None,
    both_empty: int = 0,
) -> EvalSummary:
    """Mean and sample (n-1) standard deviation of IoU, plus optional extras."""
    if not iou_list:
        raise ValueError("iou_list is empty")
    ious = [float(v) for v in iou_list]
    mean = float(np.mean(ious))
    if len(ious) == 1:
        std, degenerate = 0.0, True
    else:
        std, degenerate = float(np.std(ious, ddof=1)), False
    acc = None
    if decisions is not None and labels is not None:
        acc = case_accuracy(decisions, labels)
    pix = float(np.mean(pixel_accuracies)) if pixel_accuracies else None
    return EvalSummary(
        ious=ious,
        mean_iou=mean,
        std_iou=std,
        pixel_accuracy=pix,
        case_accuracy=acc,
        degenerate_std=degenerate,
        both_empty=both_empty,
    )
