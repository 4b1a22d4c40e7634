"""Cubic Bezier curves, smooth closed loops, and binary mask rasterization.

Loops are chains of cubic segments whose inner control points are built by
reflecting a per-anchor tangent vector through the anchor, which makes the
first derivative continuous across every joint by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BezierSegment",
    "BezierLoop",
    "BinaryMask",
    "bezier_point",
    "eval_cubic_bezier",
    "eval_cubic_bezier_derivative",
    "sample_anchor_ring",
    "sample_ring_tangents",
    "build_closed_loop",
    "random_loop",
    "polygonize_loop",
    "fill_polygon_even_odd",
    "rasterize_loop",
    "polygon_signed_area",
]


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite point: {p!r}")
    return a


@dataclass(frozen=True, eq=False)
class BezierSegment:
    """One cubic segment with control points p0..p3 (p0/p3 are endpoints)."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "p3"):
            object.__setattr__(self, name, _as_point(getattr(self, name)))

    @property
    def controls(self) -> np.ndarray:
        return np.stack([self.p0, self.p1, self.p2, self.p3])


@dataclass(frozen=True, eq=False)
class BezierLoop:
    """Closed chain of N cubic segments over N anchors with shared tangents."""

    anchors: np.ndarray   # (N, 2)
    tangents: np.ndarray  # (N, 2)
    segments: tuple[BezierSegment, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.segments)

    def c1_residual(self) -> float:
        """Max joint mismatch between outgoing and incoming first derivatives."""
        n = len(self.segments)
        worst = 0.0
        for i in range(n):
            d_end = eval_cubic_bezier_derivative(self.segments[i], 1.0)
            d_start = eval_cubic_bezier_derivative(self.segments[(i + 1) % n], 0.0)
            worst = max(worst, float(np.abs(d_end - d_start).max()))
        return worst


@dataclass
class BinaryMask:
    """Hard inside/outside raster; `degenerate` flags a zero-area source loop."""

    bits: np.ndarray  # (H, W) bool
    degenerate: bool = False

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def bezier_point(controls: np.ndarray, t: float) -> np.ndarray:
    """Evaluate an n-order Bezier curve from its n+1 control points.

    Uses the Bernstein form sum_k C(n,k) t^k (1-t)^(n-k) P_k; at the ends the
    0**0 terms evaluate to 1, so endpoints interpolate exactly.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter t={t} outside [0, 1]")
    pts = np.asarray(controls, dtype=np.float64)
    n = pts.shape[0] - 1
    k = np.arange(n + 1)
    coeff = np.array([math.comb(n, i) for i in k], dtype=np.float64)
    weights = coeff * (t ** k) * ((1.0 - t) ** (n - k))
    return weights @ pts


def eval_cubic_bezier(seg: BezierSegment, t: float) -> np.ndarray:
    return bezier_point(seg.controls, t)


def eval_cubic_bezier_derivative(seg: BezierSegment, t: float) -> np.ndarray:
    """First derivative of a cubic segment: 3 * quadratic in the control deltas."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter t={t} outside [0, 1]")
    deltas = np.diff(seg.controls, axis=0)  # (3, 2)
    k = np.arange(3)
    coeff = np.array([math.comb(2, i) for i in k], dtype=np.float64)
    weights = coeff * (t ** k) * ((1.0 - t) ** (2 - k))
    return 3.0 * (weights @ deltas)


def polygon_signed_area(points: np.ndarray) -> float:
    """Shoelace area; positive for anti-clockwise traversal (y up)."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def sample_anchor_ring(
    rng: np.random.Generator,
    n: int,
    min_separation: float = 0.05,
    max_attempts: int = 100_000,
) -> np.ndarray:
    """Draw n unit-square points with pairwise separation, ordered anti-clockwise.

    Points are rejection-sampled one at a time, then sorted by angle around
    their centroid so the ring has positive signed area. Near-collinear rings
    (zero area) are resampled.
    """
    if n < 3:
        raise ValueError(f"need at least 3 anchors, got {n}")
    attempts = 0
    while True:
        pts: list[np.ndarray] = []
        while len(pts) < n:
            attempts += 1
            if attempts > max_attempts:
                raise RuntimeError(
                    f"anchor sampling failed after {max_attempts} attempts "
                    f"(n={n}, min_separation={min_separation})"
                )
            cand = rng.random(2)
            if all(np.hypot(*(cand - p)) >= min_separation for p in pts):
                pts.append(cand)
        ring = np.asarray(pts)
        centroid = ring.mean(axis=0)
        angles = np.arctan2(ring[:, 1] - centroid[1], ring[:, 0] - centroid[0])
        ring = ring[np.argsort(angles, kind="stable")]
        if polygon_signed_area(ring) > 1e-6:
            return ring


def sample_ring_tangents(
    rng: np.random.Generator,
    anchors: np.ndarray,
    max_angle_deg: float = 30.0,
    magnitude_range: tuple[float, float] = (0.1, 0.5),
) -> np.ndarray:
    """Random per-anchor tangent vectors for a smooth, lobed closed loop.

    Each tangent starts perpendicular (in the travel direction) to the
    centroid-to-anchor ray, gets jittered by a random angle, and is scaled by
    a random fraction of the mean anchor spacing.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    n = len(anchors)
    centroid = anchors.mean(axis=0)
    radial = anchors - centroid
    norms = np.hypot(radial[:, 0], radial[:, 1])
    radial = np.where(norms[:, None] > 1e-12, radial / np.maximum(norms, 1e-12)[:, None],
                      np.tile([1.0, 0.0], (n, 1)))
    perp = np.stack([-radial[:, 1], radial[:, 0]], axis=1)

    spacing = np.hypot(*(np.roll(anchors, -1, axis=0) - anchors).T).mean()
    theta = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, size=n))
    mags = rng.uniform(*magnitude_range, size=n) * spacing

    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rotated = np.stack(
        [cos_t * perp[:, 0] - sin_t * perp[:, 1],
         sin_t * perp[:, 0] + cos_t * perp[:, 1]], axis=1)
    return rotated * mags[:, None]


def build_closed_loop(anchors: np.ndarray, tangents: np.ndarray) -> BezierLoop:
    """Chain cubic segments through the anchors with exact joint smoothness.

    Segment i runs anchors[i] -> anchors[i+1] with inner control points
    anchors[i] + tangents[i] and anchors[i+1] - tangents[i+1]; the two inner
    points adjacent to each shared anchor are reflections of each other
    through it, so the outgoing derivative equals the incoming one exactly.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    tangents = np.atleast_2d(np.asarray(tangents, dtype=np.float64))
    if anchors.shape != tangents.shape or anchors.ndim != 2 or anchors.shape[1] != 2:
        raise ValueError(
            f"anchors/tangents shape mismatch: {anchors.shape} vs {tangents.shape}")
    n = len(anchors)
    if n < 3:
        raise ValueError(f"need at least 3 anchors, got {n}")
    if not (np.all(np.isfinite(anchors)) and np.all(np.isfinite(tangents))):
        raise ValueError("anchors/tangents must be finite")

    segments = []
    for i in range(n):
        j = (i + 1) % n
        segments.append(BezierSegment(
            anchors[i],
            anchors[i] + tangents[i],
            anchors[j] - tangents[j],
            anchors[j],
        ))
    return BezierLoop(anchors=anchors, tangents=tangents, segments=tuple(segments))


def random_loop(rng: np.random.Generator, n_anchors: int) -> BezierLoop:
    anchors = sample_anchor_ring(rng, n_anchors)
    tangents = sample_ring_tangents(rng, anchors)
    return build_closed_loop(anchors, tangents)


def polygonize_loop(loop: BezierLoop, samples_per_segment: int = 64) -> np.ndarray:
    """Uniform-t polyline over all segments; closure is implicit (no repeats)."""
    if samples_per_segment < 2:
        raise ValueError(f"samples_per_segment must be >= 2, got {samples_per_segment}")
    ts = np.arange(samples_per_segment, dtype=np.float64) / samples_per_segment
    chunks = []
    for seg in loop.segments:
        omt = 1.0 - ts
        w = np.stack([omt**3, 3 * omt**2 * ts, 3 * omt * ts**2, ts**3], axis=1)
        chunks.append(w @ seg.controls)
    return np.concatenate(chunks, axis=0)


def _edge_arrays(vertices: np.ndarray):
    x0, y0 = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    return x0, y0, x1, y1


def fill_polygon_even_odd(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scanline even-odd fill of a closed polygon over integer pixel centers.

    Pixel (r, c) tests the point (x=c, y=r). An edge crosses row r under the
    half-open rule (y0 <= r < y1) or (y1 <= r < y0); the pixel is interior
    when an odd number of crossings lie at x <= c. Centers that land exactly
    on an edge are always counted inside, so a polygon tracing the full pixel
    grid fills completely.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(vertices) < 3:
        return mask
    x0, y0, x1, y1 = _edge_arrays(vertices)
    cols = np.arange(width)

    for r in range(height):
        y = float(r)
        crossing = ((y0 <= y) & (y1 > y)) | ((y1 <= y) & (y0 > y))
        if crossing.any():
            t = (y - y0[crossing]) / (y1[crossing] - y0[crossing])
            xs = np.sort(x0[crossing] + t * (x1[crossing] - x0[crossing]))
            mask[r] = (np.searchsorted(xs, cols, side="right") % 2) == 1

    _mark_boundary_pixels(mask, x0, y0, x1, y1)
    return mask


def _mark_boundary_pixels(mask, x0, y0, x1, y1):
    # Pixel centers lying exactly on an edge count as inside regardless of
    # crossing parity (matters only for edges hitting the integer grid).
    height, width = mask.shape
    for ex0, ey0, ex1, ey1 in zip(x0, y0, x1, y1):
        ylo, yhi = min(ey0, ey1), max(ey0, ey1)
        r_lo = max(0, math.ceil(ylo))
        r_hi = min(height - 1, math.floor(yhi))
        if r_lo > r_hi:
            continue
        if ey0 == ey1:
            if ey0 == r_lo:  # horizontal edge on an integer row
                c_lo = max(0, math.ceil(min(ex0, ex1)))
                c_hi = min(width - 1, math.floor(max(ex0, ex1)))
                if c_lo <= c_hi:
                    mask[r_lo, c_lo:c_hi + 1] = True
            continue
        for r in range(r_lo, r_hi + 1):
            t = (r - ey0) / (ey1 - ey0)
            xc = ex0 + t * (ex1 - ex0)
            c = int(round(xc))
            if xc == c and 0 <= c < width:
                mask[r, c] = True


def _is_degenerate_polyline(vertices: np.ndarray, tol: float = 1e-9) -> bool:
    base = vertices[0]
    rel = vertices - base
    lengths = np.hypot(rel[:, 0], rel[:, 1])
    far = lengths.max()
    if far < tol:
        return True
    d = rel[int(lengths.argmax())] / far
    cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
    return bool(np.abs(cross).max() < tol)


def rasterize_loop(
    loop: BezierLoop,
    height: int,
    width: int,
    samples_per_segment: int = 64,
) -> BinaryMask:
    """Scale a unit-square loop onto the pixel grid and fill its interior.

    Unit coordinates map onto (width-1) x (height-1) so that the square's
    corners land on the corner pixel centers. A zero-area polyline yields an
    all-false mask flagged degenerate instead of raising.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"mask dims must be positive, got {height}x{width}")
    poly = polygonize_loop(loop, samples_per_segment)
    scaled = poly * np.array([width - 1.0, height - 1.0])
    if _is_degenerate_polyline(scaled):
        return BinaryMask(np.zeros((height, width), dtype=bool), degenerate=True)
    return BinaryMask(fill_polygon_even_odd(scaled, height, width))
