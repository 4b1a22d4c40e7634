"""Authenticity filtering of synthesized samples.

The decision rule is a strict threshold on p(real): a sample is kept only
when its score is strictly greater than the threshold (ties are discarded).
Scores come either from an external discriminator via CSV, or from a crude
color-statistics heuristic that exists so the pipeline runs end to end
without a trained model. The heuristic makes no claim of matching a learned
discriminator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AuthenticityScore",
    "FilterDecision",
    "ReferenceStats",
    "apply_filter",
    "load_external_scores",
    "write_scores",
    "compute_reference_stats",
    "heuristic_score",
]


@dataclass(frozen=True)
class AuthenticityScore:
    sample_id: str
    p_real: float

    def __post_init__(self):
        object.__setattr__(self, "p_real", float(self.p_real))
        if not 0.0 <= self.p_real <= 1.0:
            raise ValueError(f"score for {self.sample_id!r} outside [0,1]: {self.p_real}")


@dataclass(frozen=True)
class FilterDecision:
    sample_id: str
    p_real: float
    kept: bool


def apply_filter(scores: list[AuthenticityScore], threshold: float = 0.5) -> list[FilterDecision]:
    """Keep exactly the samples scoring strictly above the threshold."""
    return [FilterDecision(s.sample_id, s.p_real, s.p_real > threshold) for s in scores]


def load_external_scores(path: str | Path) -> list[AuthenticityScore]:
    """Parse a `sample_id,p_real` CSV (optional header, UTF-8, LF endings)."""
    path = Path(path)
    scores: list[AuthenticityScore] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            sample_id, raw = row[0].strip(), row[1].strip()
            try:
                value = float(raw)
            except ValueError:
                if lineno == 1:  # header row
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric score {raw!r}") from None
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{path}:{lineno}: score {value} outside [0,1]")
            if sample_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            scores.append(AuthenticityScore(sample_id, value))
    return scores


def write_scores(scores: list[AuthenticityScore], path: str | Path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        fh.write("sample_id,p_real\n")
        for s in scores:
            fh.write(f"{s.sample_id},{s.p_real!r}\n")


@dataclass(frozen=True)
class ReferenceStats:
    """Per-channel mean and std over all pixels of a real-image pool."""

    channel_mean: np.ndarray  # (3,)
    channel_std: np.ndarray   # (3,)


def compute_reference_stats(images: list[np.ndarray]) -> ReferenceStats:
    if not images:
        raise ValueError("reference pool must contain at least one image")
    count = 0
    total = np.zeros(3)
    total_sq = np.zeros(3)
    for img in images:
        px = img.reshape(-1, 3).astype(np.float64)
        count += px.shape[0]
        total += px.sum(axis=0)
        total_sq += (px * px).sum(axis=0)
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    # floor keeps self-scoring defined for a constant-color pool
    return ReferenceStats(mean, np.maximum(np.sqrt(var), 1e-6))


def heuristic_score(
    images: list[np.ndarray],
    reference_stats: ReferenceStats,
    sample_ids: list[str] | None = None,
) -> list[AuthenticityScore]:
    """Score images by color typicality: exp(-d), with d the mean squared
    z-score distance of the image's per-channel mean and std from the pool's
    per-channel statistics (6 z terms, scale = pool channel std)."""
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(images))]
    if len(sample_ids) != len(images):
        raise ValueError("sample_ids length must match images")
    mu, sigma = reference_stats.channel_mean, reference_stats.channel_std
    out = []
    for sid, img in zip(sample_ids, images):
        px = img.reshape(-1, 3).astype(np.float64)
        z_mean = (px.mean(axis=0) - mu) / sigma
        z_std = (px.std(axis=0) - sigma) / sigma
        d = float(np.mean(np.concatenate([z_mean, z_std]) ** 2))
        out.append(AuthenticityScore(sid, float(np.exp(-d))))
    return out
