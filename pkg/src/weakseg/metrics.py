"""Dice scoring, size-bound estimation, and foreground-expansion diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import SizeBounds
from .tensor import Tensor


def binarize(probs, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map to a boolean mask (>= is foreground)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    values = probs.values if isinstance(probs, Tensor) else np.asarray(probs)
    if values.ndim == 3:
        values = values[0]
    return values >= threshold


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); two empty masks score 1.0 by convention."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / total


def size_bounds(masks) -> SizeBounds:
    """Prior interval from observed areas: (0.9 * min, 1.1 * max)."""
    areas = []
    for m in masks:
        area = int(np.asarray(m, dtype=bool).sum())
        if area == 0:
            raise ValueError("size bounds need nonempty masks")
        areas.append(area)
    if not areas:
        raise ValueError("size bounds need at least one mask")
    return SizeBounds(0.9 * min(areas), 1.1 * max(areas))


def expansion_ratio(pred: np.ndarray, gt: np.ndarray) -> float:
    """Predicted over true foreground area; > 1 expansion, < 1 suppression."""
    gt_area = int(np.asarray(gt, dtype=bool).sum())
    if gt_area == 0:
        raise ValueError("expansion ratio is undefined for an empty ground truth")
    return int(np.asarray(pred, dtype=bool).sum()) / gt_area


@dataclass
class EvalReport:
    """Per-sample and aggregate segmentation quality on a dataset."""

    sample_ids: list
    dice_scores: list
    pred_areas: list
    gt_areas: list
    expansion_ratios: list
    bounds: SizeBounds | None = None

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice_scores))

    @property
    def mean_expansion(self) -> float:
        return float(np.mean(self.expansion_ratios))

    def to_csv(self) -> str:
        lines = ["sample_id,dice,pred_area,gt_area,expansion_ratio"]
        for i, d, pa, ga, er in zip(self.sample_ids, self.dice_scores,
                                    self.pred_areas, self.gt_areas,
                                    self.expansion_ratios):
            lines.append(f"{i},{d!r},{pa},{ga},{er!r}")
        return "\n".join(lines) + "\n"

    def summary_line(self) -> str:
        return (f"samples={len(self.sample_ids)} mean_dice={self.mean_dice:.4f} "
                f"mean_expansion={self.mean_expansion:.4f}")


def evaluate_samples(net, samples, threshold: float = 0.5) -> EvalReport:
    """Run the net over samples and score against their full masks."""
    ids, scores, pred_areas, gt_areas, ratios = [], [], [], [], []
    for s in samples:
        probs = net.forward(Tensor(s.image[None]))
        pred = binarize(probs, threshold)
        ids.append(s.id)
        scores.append(dice(pred, s.full_mask))
        pred_areas.append(int(pred.sum()))
        gt_areas.append(int(s.full_mask.sum()))
        ratios.append(expansion_ratio(pred, s.full_mask))
    return EvalReport(ids, scores, pred_areas, gt_areas, ratios)


def mean_soft_size(net, samples) -> float:
    """Mean predicted soft foreground size over a dataset."""
    sizes = [float(net.forward(Tensor(s.image[None])).values.sum()) for s in samples]
    return float(np.mean(sizes))
