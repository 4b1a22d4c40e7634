"""Segmentation evaluation: per-class IoU / mIoU / fwIoU with background
exclusion, plus the two-tailed permutation test used to compare runs.

Ground-truth background pixels never enter the confusion matrix. Predictions
of "background" on evaluated pixels are tallied in a reserved column so they
count as misses without pretending background is a class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "MetricReport",
    "accumulate",
    "compute_report",
    "permutation_test",
    "derive_image_labels",
    "infer_background_mask",
]


@dataclass
class ConfusionMatrix:
    """Rows = ground truth class, cols = predicted class; plus a reserved
    tally of evaluated pixels the prediction labeled as background."""

    num_classes: int
    background_index: int = 255
    counts: np.ndarray = field(default=None)               # (C, C) int64
    predicted_background: np.ndarray = field(default=None)  # (C,) int64

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        if self.background_index < self.num_classes:
            raise ValueError("background index collides with class indices")
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        if self.predicted_background is None:
            self.predicted_background = np.zeros(self.num_classes, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.predicted_background.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes or other.background_index != self.background_index:
            raise ValueError("cannot merge confusion matrices with different class layouts")
        return ConfusionMatrix(
            self.num_classes,
            self.background_index,
            self.counts + other.counts,
            self.predicted_background + other.predicted_background,
        )

    __add__ = merge


def accumulate(pred: np.ndarray, gt: np.ndarray, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair into the matrix (in place).

    Pixels whose ground truth is the background index are skipped entirely.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred/gt shape mismatch: {pred.shape} vs {gt.shape}")
    C, bg = cm.num_classes, cm.background_index

    evaluated = gt != bg
    g = gt[evaluated].astype(np.int64)
    p = pred[evaluated].astype(np.int64)
    if g.size == 0:
        return cm
    if g.max() >= C:
        raise ValueError(f"ground truth contains class {int(g.max())} >= {C}")
    pred_bg = p == bg
    bad = ~pred_bg & ((p < 0) | (p >= C))
    if bad.any():
        raise ValueError(f"prediction contains invalid class {int(p[bad][0])}")

    pair = g[~pred_bg] * C + p[~pred_bg]
    cm.counts += np.bincount(pair, minlength=C * C).reshape(C, C)
    cm.predicted_background += np.bincount(g[pred_bg], minlength=C)
    return cm


@dataclass
class MetricReport:
    per_class_iou: list[float | None]
    miou: float
    fwiou: float
    pixel_counts: list[int]
    predicted_background: list[int]

    def to_dict(self) -> dict:
        return {
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "fwiou": self.fwiou,
            "pixel_counts": self.pixel_counts,
            "predicted_background": self.predicted_background,
        }


def compute_report(cm: ConfusionMatrix) -> MetricReport:
    """IoU per class, unweighted mean over defined classes, and the
    ground-truth-frequency-weighted mean. A class with an empty union is
    undefined (None) and excluded from both averages."""
    tp = np.diag(cm.counts).astype(np.float64)
    gt_counts = cm.counts.sum(axis=1) + cm.predicted_background  # per-class evaluated pixels
    fp = cm.counts.sum(axis=0) - np.diag(cm.counts)
    union = gt_counts + fp  # tp + fp + fn
    defined = union > 0
    if not defined.any():
        raise ValueError("no evaluated pixels: every class IoU is undefined")

    iou = np.where(defined, tp / np.where(defined, union, 1), np.nan)
    total = gt_counts.sum()
    weights = gt_counts[defined] / total
    return MetricReport(
        per_class_iou=[float(v) if d else None for v, d in zip(iou, defined)],
        miou=float(iou[defined].mean()),
        fwiou=float((weights * iou[defined]).sum()),
        pixel_counts=[int(v) for v in gt_counts],
        predicted_background=[int(v) for v in cm.predicted_background],
    )


def permutation_test(
    group_a: np.ndarray,
    group_b: np.ndarray,
    max_exact: int = 20_000,
    mc_iters: int = 100_000,
    seed: int = 0,
) -> float:
    """Two-tailed permutation test on the difference of group means.

    All label reassignments are enumerated when their count is at most
    max_exact; otherwise mc_iters random permutations plus the identity are
    used, with the identity in both numerator and denominator so p > 0.
    """
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both groups must be non-empty")
    pooled = np.concatenate([a, b])
    na, n = a.size, a.size + b.size
    total = pooled.sum()
    observed = abs(a.mean() - b.mean())
    # tolerate float noise when a permuted statistic ties the observed one
    cutoff = observed - 1e-12 * max(1.0, observed)

    def stats_from_sums(sum_a: np.ndarray) -> np.ndarray:
        return np.abs(sum_a / na - (total - sum_a) / (n - na))

    n_exact = math.comb(n, na)
    if n_exact <= max_exact:
        idx = np.fromiter(
            (i for combo in combinations(range(n), na) for i in combo),
            dtype=np.intp, count=n_exact * na).reshape(n_exact, na)
        stats = stats_from_sums(pooled[idx].sum(axis=1))
        return float((stats >= cutoff).sum() / n_exact)

    rng = np.random.default_rng(seed)
    hits = 1  # the identity assignment
    chunk = 8192
    done = 0
    while done < mc_iters:
        size = min(chunk, mc_iters - done)
        perms = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
        stats = stats_from_sums(pooled[perms[:, :na]].sum(axis=1))
        hits += int((stats >= cutoff).sum())
        done += size
    return hits / (mc_iters + 1)


def derive_image_labels(
    mask: np.ndarray,
    num_classes: int,
    background_index: int = 255,
    min_pixels: int = 1,
) -> np.ndarray:
    """Multi-hot image-level labels inferred from a pixel mask: class c is
    present when it occupies at least min_pixels non-background pixels."""
    mask = np.asarray(mask)
    flat = mask[mask != background_index]
    if flat.size and flat.max() >= num_classes:
        raise ValueError(f"mask contains class {int(flat.max())} >= {num_classes}")
    counts = np.bincount(flat.astype(np.int64), minlength=num_classes)
    return counts >= min_pixels


def infer_background_mask(image: np.ndarray, threshold: int = 235) -> np.ndarray:
    """White-region detector for real images without masks: a pixel is
    background when min(R, G, B) >= threshold."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    return image.min(axis=2) >= threshold
