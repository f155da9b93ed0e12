"""Scalar scores: IoU, object matching, the threshold-averaged quality
metric, DSC, HD95, and reference loss functions.

The quality metric averages TP/(TP+FP+FN) over the IoU threshold set
T = {0.5, 0.55, ..., 1.0}. Matching at a threshold is greedy in descending
IoU with deterministic tie-breaks; for t >= 0.5 and disjoint instances per
side this equals the optimal assignment, because no mask can overlap two
disjoint masks with IoU >= 0.5 unless they tile it exactly (in which case
every matching has the same cardinality).

Match acceptance is IoU >= t, not strict: T contains t = 1.0, and a perfect
prediction must score 1.0 there.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import distance_map
from .mask import InstanceMask, LabelMask, extract_instances

DEFAULT_THRESHOLDS: tuple[float, ...] = tuple(k / 100 for k in range(50, 101, 5))

DICE_EPS = 1e-7


def _as_bool(mask: np.ndarray | InstanceMask) -> np.ndarray:
    if isinstance(mask, InstanceMask):
        return mask.mask
    return np.asarray(mask, dtype=bool)


def _check_same_frame(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"frame mismatch: {a.shape} vs {b.shape}")


def iou(a: np.ndarray | InstanceMask, b: np.ndarray | InstanceMask) -> float:
    """Intersection over union of two pixel sets in the same frame."""
    a, b = _as_bool(a), _as_bool(b)
    _check_same_frame(a, b)
    union = int((a | b).sum())
    if union == 0:
        return 0.0
    return int((a & b).sum()) / union


def dsc(a: np.ndarray | InstanceMask, b: np.ndarray | InstanceMask) -> float:
    """Dice similarity coefficient 2|A∩B|/(|A|+|B|); 1.0 when both empty."""
    a, b = _as_bool(a), _as_bool(b)
    _check_same_frame(a, b)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def pairwise_iou(
    pred: list[InstanceMask], gt: list[InstanceMask]
) -> np.ndarray:
    """IoU matrix of shape (len(pred), len(gt))."""
    if not pred or not gt:
        return np.zeros((len(pred), len(gt)))
    frame = pred[0].mask.shape
    for m in [*pred, *gt]:
        if m.mask.shape != frame:
            raise ValueError("all instances must share one frame")
    p = np.stack([m.mask.ravel() for m in pred]).astype(np.int64)
    g = np.stack([m.mask.ravel() for m in gt]).astype(np.int64)
    inter = p @ g.T
    areas_p = p.sum(axis=1)[:, None]
    areas_g = g.sum(axis=1)[None, :]
    union = areas_p + areas_g - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


@dataclass(frozen=True)
class MatchResult:
    """Object matching outcome at one IoU threshold."""

    threshold: float
    tp: int
    fp: int
    fn: int
    matched_pairs: tuple[tuple[int, int, float], ...]  # (pred_id, gt_id, iou)

    @property
    def score(self) -> float:
        denom = self.tp + self.fp + self.fn
        if denom == 0:
            return 1.0  # both sides empty: vacuous success
        return self.tp / denom


def match_at_threshold(
    pred: list[InstanceMask],
    gt: list[InstanceMask],
    threshold: float,
    iou_matrix: np.ndarray | None = None,
) -> MatchResult:
    """Greedy one-to-one matching in descending IoU.

    A pair is accepted iff IoU >= threshold; ties are broken by smaller
    gt_id, then smaller pred_id.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    ious = pairwise_iou(pred, gt) if iou_matrix is None else iou_matrix
    candidates = [
        (ious[i, j], gt[j].object_id, pred[i].object_id, i, j)
        for i in range(len(pred))
        for j in range(len(gt))
        if ious[i, j] >= threshold
    ]
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for v, gt_id, pred_id, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        pairs.append((pred_id, gt_id, float(v)))
    tp = len(pairs)
    return MatchResult(
        threshold=threshold,
        tp=tp,
        fp=len(pred) - tp,
        fn=len(gt) - tp,
        matched_pairs=tuple(pairs),
    )


@dataclass(frozen=True)
class QualityReport:
    """Per-threshold matching and the threshold-averaged quality for one
    prediction/ground-truth pair."""

    thresholds: tuple[float, ...]
    matches: tuple[MatchResult, ...]
    n_pred: int
    n_gt: int

    @property
    def per_threshold_scores(self) -> tuple[float, ...]:
        return tuple(m.score for m in self.matches)

    @property
    def quality(self) -> float:
        scores = self.per_threshold_scores
        return sum(scores) / len(scores)


def quality(
    pred: LabelMask,
    gt: LabelMask,
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> QualityReport:
    """Mean over thresholds of TP/(TP+FP+FN) between two instance maps."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError(
            f"frame mismatch: {(pred.width, pred.height)} vs {(gt.width, gt.height)}"
        )
    if not thresholds:
        raise ValueError("threshold set must be non-empty")
    pred_inst = extract_instances(pred)
    gt_inst = extract_instances(gt)
    ious = pairwise_iou(pred_inst, gt_inst)
    matches = tuple(
        match_at_threshold(pred_inst, gt_inst, t, iou_matrix=ious) for t in thresholds
    )
    return QualityReport(
        thresholds=tuple(thresholds),
        matches=matches,
        n_pred=len(pred_inst),
        n_gt=len(gt_inst),
    )


@dataclass(frozen=True)
class DatasetQuality:
    """Quality over a set of images, under both aggregation conventions.

    ``mean_quality`` is the unweighted mean of per-image qualities.
    ``pooled_quality`` sums TP/FP/FN across images per threshold before
    scoring. Both are emitted because reported single-number qualities do
    not pin down the convention.
    """

    thresholds: tuple[float, ...]
    per_image: dict[str, QualityReport]
    mean_quality: float
    pooled_scores: tuple[float, ...]
    pooled_quality: float


def dataset_quality(per_image: dict[str, QualityReport]) -> DatasetQuality:
    if not per_image:
        raise ValueError("dataset quality needs at least one image")
    reports = list(per_image.values())
    thresholds = reports[0].thresholds
    for r in reports:
        if r.thresholds != thresholds:
            raise ValueError("all reports must share one threshold set")
    mean_quality = sum(r.quality for r in reports) / len(reports)
    pooled = []
    for k in range(len(thresholds)):
        tp = sum(r.matches[k].tp for r in reports)
        fp = sum(r.matches[k].fp for r in reports)
        fn = sum(r.matches[k].fn for r in reports)
        pooled.append(1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn))
    return DatasetQuality(
        thresholds=thresholds,
        per_image=dict(per_image),
        mean_quality=mean_quality,
        pooled_scores=tuple(pooled),
        pooled_quality=sum(pooled) / len(pooled),
    )


def quality_rows(report: DatasetQuality) -> list[dict[str, object]]:
    """Flatten to rows (image, threshold, tp, fp, fn, score, quality)."""
    rows: list[dict[str, object]] = []
    for image in sorted(report.per_image):
        r = report.per_image[image]
        for m in r.matches:
            rows.append(
                {
                    "image": image,
                    "threshold": m.threshold,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                    "score": m.score,
                    "quality": r.quality,
                }
            )
    return rows


def write_quality_csv(
    report: DatasetQuality, path: str | Path, seed: int | None = None
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["image", "threshold", "tp", "fp", "fn", "score", "quality"])
        for row in quality_rows(report):
            writer.writerow(
                [
                    row["image"],
                    f"{row['threshold']:.2f}",
                    row["tp"],
                    row["fp"],
                    row["fn"],
                    f"{row['score']:.6f}",
                    f"{row['quality']:.6f}",
                ]
            )


def quality_json(report: DatasetQuality) -> str:
    return json.dumps(
        {
            "thresholds": list(report.thresholds),
            "mean_quality": report.mean_quality,
            "pooled_quality": report.pooled_quality,
            "pooled_scores": list(report.pooled_scores),
            "per_image": {
                name: {
                    "quality": r.quality,
                    "scores": list(r.per_threshold_scores),
                    "n_pred": r.n_pred,
                    "n_gt": r.n_gt,
                }
                for name, r in sorted(report.per_image.items())
            },
        },
        indent=2,
        sort_keys=True,
    )


def hd95(a: InstanceMask, b: InstanceMask) -> float:
    """95th-percentile symmetric boundary distance.

    Directed boundary-center distances a->b and b->a are pooled and the
    nearest-rank 95th percentile taken: the smallest d such that at least
    95% of pooled distances are <= d. Symmetric by construction.
    """
    if a.mask.shape != b.mask.shape:
        raise ValueError("frame mismatch")
    dist_to_b = distance_map(b)
    dist_to_a = distance_map(a)
    d_ab = dist_to_b[a.boundary()]
    d_ba = dist_to_a[b.boundary()]
    pooled = np.sort(np.concatenate([d_ab, d_ba]))
    rank = int(np.ceil(0.95 * pooled.size))  # nearest-rank, 1-based
    return float(pooled[max(rank - 1, 0)])


def dice_loss(pred: np.ndarray, gt: np.ndarray | InstanceMask) -> float:
    """Soft dice loss 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps=1e-7."""
    pred = np.asarray(pred, dtype=np.float64)
    g = _as_bool(gt).astype(np.float64)
    _check_same_frame(pred, g)
    if pred.min(initial=0.0) < 0.0 or pred.max(initial=0.0) > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    num = 2.0 * float((pred * g).sum()) + DICE_EPS
    den = float(pred.sum()) + float(g.sum()) + DICE_EPS
    return 1.0 - num / den


def dice_loss_gradient(pred: np.ndarray, gt: np.ndarray | InstanceMask) -> np.ndarray:
    """Analytic gradient of :func:`dice_loss` with respect to each pixel."""
    pred = np.asarray(pred, dtype=np.float64)
    g = _as_bool(gt).astype(np.float64)
    _check_same_frame(pred, g)
    num = 2.0 * float((pred * g).sum()) + DICE_EPS
    den = float(pred.sum()) + float(g.sum()) + DICE_EPS
    return (num - 2.0 * g * den) / (den * den)


def l2_iou_loss(predicted_iou: float, true_iou: float) -> float:
    """Squared error between a model's self-estimated IoU and the true IoU."""
    for name, v in (("predicted_iou", predicted_iou), ("true_iou", true_iou)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return (predicted_iou - true_iou) ** 2
