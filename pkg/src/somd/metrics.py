"""Threshold-sweep evaluation: pixel ROC-AUC and the per-region-overlap score.

All confusion quantities are computed by exact counting (sorting plus binary
search), never by accumulating floats, so results match an exhaustive
brute-force sweep bit-for-bit whenever both use the same threshold set.

PRO conventions (the metric's definition leaves these open; recorded here):
  - regions are pooled across all test images and weighted equally;
  - thresholds are 500 quantiles of the pooled scores plus +-inf endpoints;
  - the mean-region-TPR curve is integrated over FPR in [0, 0.3] by trapezoid
    with linear interpolation at the 0.3 crossing, then divided by 0.3.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import (
    NoAnomalousRegion,
    NoNormalPixel,
    ShapeMismatch,
    SingleClass,
    ValidationError,
)

FPR_LIMIT = 0.3
THRESHOLD_COUNT = 500

CURVE_HEADER = ("threshold", "fpr", "mean_region_tpr", "tpr")


@dataclass(frozen=True)
class RegionLabeling:
    """Partition of a mask's foreground into maximal 8-connected regions.

    labels: (h, w) int32, 0 for background, 1..region_count in row-major
    discovery order.  regions holds each region's flat (row-major) pixel
    indices.
    """

    labels: np.ndarray
    region_count: int
    regions: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class EvalResult:
    pro: float
    roc_auc: float
    thresholds: np.ndarray  # descending, with +-inf endpoints
    fpr: np.ndarray
    mean_region_tpr: np.ndarray
    tpr: np.ndarray

    @property
    def pro_curve(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.mean_region_tpr.tolist()))

    @property
    def roc_curve(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype == bool:
        return mask
    vals = np.unique(mask)
    if not np.isin(vals, (0, 1)).all():
        raise ValidationError("mask values must be binary (0/1)")
    return mask != 0


def _pool_max3(labels: np.ndarray) -> np.ndarray:
    p = np.pad(labels, 1)
    h, w = labels.shape
    views = [p[di : di + h, dj : dj + w] for di in range(3) for dj in range(3)]
    return np.maximum.reduce(views)


def connected_components(mask: np.ndarray) -> RegionLabeling:
    """Label maximal 8-connected foreground regions.

    Each pixel starts as its own seed index; iterated 3x3 max-pooling spreads
    the largest index through each component until a fixed point, then labels
    are renumbered 1..R in row-major discovery order.
    """
    fg = _check_mask(mask)
    h, w = fg.shape
    if not fg.any():
        return RegionLabeling(np.zeros((h, w), np.int32), 0, ())
    labels = np.where(fg, np.arange(1, h * w + 1, dtype=np.int64).reshape(h, w), 0)
    while True:
        spread = np.where(fg, _pool_max3(labels), 0)
        if np.array_equal(spread, labels):
            break
        labels = spread

    flat = labels.ravel()
    fg_flat = flat[flat > 0]
    uniq, first = np.unique(fg_flat, return_index=True)
    discovery = uniq[np.argsort(first)]
    rank_of = np.empty(len(uniq), dtype=np.int32)
    rank_of[np.argsort(first)] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    out = np.zeros(h * w, np.int32)
    nz = flat > 0
    out[nz] = rank_of[np.searchsorted(uniq, flat[nz])]
    regions = tuple(np.flatnonzero(out == r) for r in range(1, len(uniq) + 1))
    return RegionLabeling(out.reshape(h, w), len(uniq), regions)


def _as_stack(arrays, name: str) -> list[np.ndarray]:
    a = np.asarray(arrays) if not isinstance(arrays, (list, tuple)) else arrays
    if isinstance(a, np.ndarray):
        if a.ndim == 2:
            return [a]
        if a.ndim == 3:
            return [a[i] for i in range(a.shape[0])]
        raise ValidationError(f"{name} must be 2-D, 3-D, or a list of 2-D maps")
    return [np.asarray(m) for m in a]


def _pool(scores, masks):
    """Flatten paired score/mask lists into pooled 1-D vectors plus regions."""
    score_maps = _as_stack(scores, "scores")
    mask_maps = _as_stack(masks, "masks")
    if len(score_maps) != len(mask_maps):
        raise ShapeMismatch(
            f"{len(score_maps)} score maps paired with {len(mask_maps)} masks"
        )
    pooled_scores = []
    pooled_labels = []
    regions = []
    offset = 0
    for s, m in zip(score_maps, mask_maps):
        s = np.asarray(s, dtype=np.float64)
        fg = _check_mask(m)
        if s.shape != fg.shape:
            raise ShapeMismatch(f"score map {s.shape} vs mask {fg.shape}")
        if not np.isfinite(s).all():
            raise ValidationError("score map contains non-finite values")
        labeling = connected_components(fg)
        for idx in labeling.regions:
            regions.append(idx + offset)
        pooled_scores.append(s.ravel())
        pooled_labels.append(fg.ravel())
        offset += s.size
    return np.concatenate(pooled_scores), np.concatenate(pooled_labels), regions


def _quantile_thresholds(pooled: np.ndarray, count: int) -> np.ndarray:
    """Descending threshold grid: score quantiles plus +-inf endpoints."""
    levels = np.linspace(0.0, 1.0, count)
    qs = np.unique(np.quantile(pooled, levels, method="higher"))
    return np.concatenate(([np.inf], qs[::-1], [-np.inf]))


def _count_ge(sorted_vals: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Exact count of values >= t for each t; pure comparisons, no arithmetic."""
    return len(sorted_vals) - np.searchsorted(sorted_vals, thresholds, side="left")


def _sweep(pooled_scores, pooled_labels, regions, thresholds):
    neg = np.sort(pooled_scores[~pooled_labels])
    pos = np.sort(pooled_scores[pooled_labels])
    fpr = _count_ge(neg, thresholds) / len(neg)
    tpr = _count_ge(pos, thresholds) / len(pos)
    region_tpr = np.zeros((len(regions), len(thresholds)))
    for r, idx in enumerate(regions):
        vals = np.sort(pooled_scores[idx])
        region_tpr[r] = _count_ge(vals, thresholds) / len(vals)
    return fpr, region_tpr.mean(axis=0), tpr


def _partial_auc(fpr: np.ndarray, tpr: np.ndarray, limit: float) -> float:
    """Trapezoid over fpr in [0, limit], linearly interpolated at the crossing.

    fpr must be weakly increasing (thresholds descending).
    """
    cut = int(np.searchsorted(fpr, limit, side="right"))
    xs = fpr[:cut]
    ys = tpr[:cut]
    if cut < len(fpr) and (cut == 0 or xs[-1] < limit):
        x0 = xs[-1] if cut else 0.0
        y0 = ys[-1] if cut else 0.0
        x1, y1 = fpr[cut], tpr[cut]
        y_at = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
        xs = np.append(xs, limit)
        ys = np.append(ys, y_at)
    return float(np.trapezoid(ys, xs))


def pro_score(scores, masks, fpr_limit: float = FPR_LIMIT,
              thresholds: int = THRESHOLD_COUNT):
    """Per-region-overlap score and its (threshold, fpr, mean_region_tpr) curve."""
    pooled_scores, pooled_labels, regions = _pool(scores, masks)
    if not regions:
        raise NoAnomalousRegion("masks contain no anomalous pixel")
    if pooled_labels.all():
        raise NoNormalPixel("masks contain no normal pixel")
    grid = _quantile_thresholds(pooled_scores, thresholds)
    fpr, mean_region_tpr, _ = _sweep(pooled_scores, pooled_labels, regions, grid)
    pro = _partial_auc(fpr, mean_region_tpr, fpr_limit) / fpr_limit
    return pro, (grid, fpr, mean_region_tpr)


def _rank_auc(pooled_scores: np.ndarray, pooled_labels: np.ndarray) -> float:
    n_pos = int(pooled_labels.sum())
    n_neg = len(pooled_labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both anomalous and normal pixels")
    ranks = rankdata(pooled_scores)
    rank_sum = ranks[pooled_labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc(scores, masks) -> float:
    """Pixel-level AUC by the Mann-Whitney rank statistic; ties count 1/2."""
    pooled_scores, pooled_labels, _ = _pool(scores, masks)
    return _rank_auc(pooled_scores, pooled_labels)


def evaluate(scores, masks, fpr_limit: float = FPR_LIMIT,
             thresholds: int = THRESHOLD_COUNT) -> EvalResult:
    """Full evaluation: PRO, ROC-AUC, and the shared threshold-sweep curves."""
    pooled_scores, pooled_labels, regions = _pool(scores, masks)
    if not regions:
        raise NoAnomalousRegion("masks contain no anomalous pixel")
    if pooled_labels.all():
        raise NoNormalPixel("masks contain no normal pixel")
    grid = _quantile_thresholds(pooled_scores, thresholds)
    fpr, mean_region_tpr, tpr = _sweep(pooled_scores, pooled_labels, regions, grid)
    pro = _partial_auc(fpr, mean_region_tpr, fpr_limit) / fpr_limit
    auc = _rank_auc(pooled_scores, pooled_labels)
    return EvalResult(
        pro=pro,
        roc_auc=auc,
        thresholds=grid,
        fpr=fpr,
        mean_region_tpr=mean_region_tpr,
        tpr=tpr,
    )


def write_curve_csv(result: EvalResult, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_HEADER)
        for t, fp, rtpr, tp in zip(result.thresholds, result.fpr,
                                   result.mean_region_tpr, result.tpr):
            writer.writerow([repr(float(t)), repr(float(fp)),
                             repr(float(rtpr)), repr(float(tp))])
