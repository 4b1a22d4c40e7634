"""Sliding-window planning and probability fusion for large-image inference.

The model itself lives elsewhere: tiles' probability maps (C, h, w) arrive as
data, get averaged over overlapping windows / dihedral variants / scales, and
leave as a fused map plus an argmax mask. Fusion accumulates in a fixed order
so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import validate_probability_map
from .synthesis import resize_bilinear

__all__ = [
    "TilePlan",
    "DihedralVariant",
    "ALL_VARIANTS",
    "plan_tiles",
    "fuse_probabilities",
    "apply_variant",
    "invert_variant",
    "tta_expand",
    "tta_fuse",
    "fuse_multiscale",
    "argmax_mask",
    "write_prob_tensor",
    "read_prob_tensor",
    "DEFAULT_SCALES",
]

DEFAULT_SCALES = (0.75, 1.0, 1.25)


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    window: int
    overlap: float
    windows: tuple[tuple[int, int], ...]  # (row, col) top-left offsets


def _axis_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:  # snap the last window flush to the edge
        starts.append(extent - window)
    return starts


def plan_tiles(height: int, width: int, window: int = 224, overlap: float = 0.0) -> TilePlan:
    """Top-left offsets covering the image with stride ceil(window*(1-overlap));
    the final row/column snaps so the last window ends exactly at the edge."""
    if window <= 0:
        raise ValueError("window must be positive")
    if window > min(height, width):
        raise ValueError(f"window {window} exceeds image {height}x{width}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    stride = int(np.ceil(window * (1.0 - overlap)))
    rows = _axis_starts(height, window, stride)
    cols = _axis_starts(width, window, stride)
    return TilePlan(height, width, window, overlap,
                    tuple((r, c) for r in rows for c in cols))


def fuse_probabilities(
    tiles: list[tuple[tuple[int, int], np.ndarray]],
    plan: TilePlan,
) -> np.ndarray:
    """Average per-pixel over all windows covering it, then renormalize.

    Every tile must sit on one of the planned offsets with shape
    (C, window, window); a pixel covered by no tile is a plan violation.
    """
    if not tiles:
        raise ValueError("no tiles to fuse")
    planned = set(plan.windows)
    C = tiles[0][1].shape[0]
    acc = np.zeros((C, plan.height, plan.width), dtype=np.float64)
    hits = np.zeros((plan.height, plan.width), dtype=np.int64)
    w = plan.window
    for (r, c), prob in tiles:
        if (r, c) not in planned:
            raise ValueError(f"tile offset {(r, c)} not in the plan")
        if prob.shape != (C, w, w):
            raise ValueError(f"tile at {(r, c)} has shape {prob.shape}, expected {(C, w, w)}")
        validate_probability_map(prob)
        acc[:, r:r + w, c:c + w] += prob
        hits[r:r + w, c:c + w] += 1
    if (hits == 0).any():
        raise ValueError(f"{int((hits == 0).sum())} pixels not covered by any tile")
    fused = acc / hits
    fused /= fused.sum(axis=0, keepdims=True)
    return fused


@dataclass(frozen=True)
class DihedralVariant:
    """One of the 8 flip/rotation symmetries: optional horizontal flip applied
    first, then an anti-clockwise rotation by `rotation` degrees."""

    rotation: int = 0
    h_flip: bool = False

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be a right angle, got {self.rotation}")

    @property
    def code(self) -> int:
        return self.rotation // 90 + (4 if self.h_flip else 0)


ALL_VARIANTS = tuple(
    DihedralVariant(rotation=rot, h_flip=flip)
    for flip in (False, True) for rot in (0, 90, 180, 270)
)


def apply_variant(arr: np.ndarray, variant: DihedralVariant,
                  axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    out = np.flip(arr, axis=axes[1]) if variant.h_flip else arr
    k = variant.rotation // 90
    if k:
        out = np.rot90(out, k, axes=axes)
    return np.ascontiguousarray(out)


def invert_variant(arr: np.ndarray, variant: DihedralVariant,
                   axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    out = arr
    k = variant.rotation // 90
    if k:
        out = np.rot90(out, -k, axes=axes)
    if variant.h_flip:
        out = np.flip(out, axis=axes[1])
    return np.ascontiguousarray(out)


def tta_expand(image: np.ndarray) -> list[tuple[DihedralVariant, np.ndarray]]:
    """All 8 dihedral variants of an HxW(xC) image."""
    return [(v, apply_variant(image, v)) for v in ALL_VARIANTS]


def tta_fuse(variant_probs: list[tuple[DihedralVariant, np.ndarray]]) -> np.ndarray:
    """Map each (C, H, W) prediction back to the original frame and average."""
    if not variant_probs:
        raise ValueError("no variant predictions to fuse")
    seen = set()
    aligned = []
    for variant, prob in variant_probs:
        if variant in seen:
            raise ValueError(f"duplicate variant {variant}")
        seen.add(variant)
        aligned.append(invert_variant(prob, variant, axes=(1, 2)))
    shapes = {a.shape for a in aligned}
    if len(shapes) != 1:
        raise ValueError(f"inverse-aligned maps disagree in shape: {shapes}")
    stack = np.stack(aligned).astype(np.float64)
    return stack.mean(axis=0)


def fuse_multiscale(scaled_maps: list[tuple[float, np.ndarray]],
                    out_h: int, out_w: int) -> np.ndarray:
    """Resize per-scale probability maps back to the reference size (bilinear
    on probabilities), renormalize each, then average and renormalize."""
    if not scaled_maps:
        raise ValueError("no scaled maps to fuse")
    resized = []
    for _, prob in scaled_maps:
        hwc = np.transpose(prob.astype(np.float64), (1, 2, 0))
        back = np.transpose(resize_bilinear(hwc, out_h, out_w), (2, 0, 1))
        back /= back.sum(axis=0, keepdims=True)
        resized.append(back)
    fused = np.stack(resized).mean(axis=0)
    fused /= fused.sum(axis=0, keepdims=True)
    return fused


def argmax_mask(prob: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over channels; ties resolve to the lowest class index."""
    if prob.ndim != 3:
        raise ValueError(f"expected (C,H,W), got {prob.shape}")
    return prob.argmax(axis=0).astype(np.uint8)


# ---------------------------------------------------------------------------
# flat binary tensor files: 3 little-endian uint32 dims (C, H, W) followed by
# row-major float32 values.

def write_prob_tensor(path: str | Path, prob: np.ndarray) -> None:
    arr = np.ascontiguousarray(prob, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected (C,H,W), got {arr.shape}")
    with Path(path).open("wb") as fh:
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_prob_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"{path}: truncated tensor header")
    c, h, w = (int(v) for v in np.frombuffer(data[:12], dtype="<u4"))
    expected = 12 + 4 * c * h * w
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {c}x{h}x{w}, got {len(data)}")
    return np.frombuffer(data[12:], dtype="<f4").reshape(c, h, w).copy()
