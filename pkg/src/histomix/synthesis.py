"""Synthesized image/mask generation: gridded splicing, mosaic assembly at a
random anchor, Bezier-mask mixing, and the shared augmentation pipeline.

Images are HxWx3 uint8 arrays, label masks HxW uint8 with a reserved
background index. Every operation takes an explicit numpy Generator and is a
pure function of (inputs, rng state), so per-sample seeding gives
schedule-independent outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np

from .geometry import BezierLoop, build_closed_loop, random_loop, rasterize_loop

__all__ = [
    "SynthesisConfig",
    "SynthesisRecipe",
    "AugmentPolicy",
    "IDENTITY_POLICY",
    "anchor_range",
    "build_gridded_image",
    "mosaic_synthesize",
    "mix_by_mask",
    "bezier_synthesize",
    "augment",
    "resize_bilinear",
    "resize_nearest",
    "single_label_class",
    "serialize_loop",
    "deserialize_loop",
]

DEFAULT_BACKGROUND = 255


@dataclass(frozen=True)
class SynthesisConfig:
    out_height: int = 224
    out_width: int = 224
    alpha: float = 0.2
    beta: float = 0.8
    m: int = 2
    n_bezier_anchors: int = 5
    seed: int = 0
    samples_per_segment: int = 64
    background_index: int = DEFAULT_BACKGROUND

    def __post_init__(self):
        if not (0.0 < self.alpha < self.beta < 1.0):
            raise ValueError(f"need 0 < alpha < beta < 1, got {self.alpha}, {self.beta}")
        if self.m < 1:
            raise ValueError(f"grid order m must be >= 1, got {self.m}")
        if self.n_bezier_anchors < 3:
            raise ValueError(f"need >= 3 Bezier anchors, got {self.n_bezier_anchors}")
        if self.out_height <= 0 or self.out_width <= 0:
            raise ValueError("output dims must be positive")


@dataclass
class SynthesisRecipe:
    """Provenance of one synthesized sample, sufficient for exact replay."""

    strategy: str
    source_ids: list[str]
    seed: int
    anchor: tuple[int, int] | None = None
    loop: dict | None = None
    augmentations: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.strategy == "mosaic":
            if self.anchor is None or self.loop is not None:
                raise ValueError("mosaic recipe carries an anchor and no loop")
        elif self.strategy == "bezier":
            if self.loop is None or self.anchor is not None:
                raise ValueError("bezier recipe carries a loop and no anchor")
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor"] = list(self.anchor) if self.anchor is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisRecipe":
        anchor = tuple(d["anchor"]) if d.get("anchor") is not None else None
        return cls(
            strategy=d["strategy"],
            source_ids=list(d["source_ids"]),
            seed=int(d["seed"]),
            anchor=anchor,
            loop=d.get("loop"),
            augmentations=list(d.get("augmentations", [])),
        )


def serialize_loop(loop: BezierLoop) -> dict:
    return {
        "anchors": [[float(x), float(y)] for x, y in loop.anchors],
        "tangents": [[float(x), float(y)] for x, y in loop.tangents],
    }


def deserialize_loop(d: dict) -> BezierLoop:
    return build_closed_loop(np.asarray(d["anchors"]), np.asarray(d["tangents"]))


def _check_pair(image: np.ndarray, mask: np.ndarray, what: str = "input"):
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{what} image must be HxWx3, got {image.shape}")
    if mask.shape != image.shape[:2]:
        raise ValueError(
            f"{what} image/mask misaligned: {image.shape[:2]} vs {mask.shape}")


def single_label_class(mask: np.ndarray, background_index: int = DEFAULT_BACKGROUND) -> int:
    """The one non-background class in a single-tissue mask (error otherwise)."""
    lo, hi = int(mask.min()), int(mask.max())
    if lo == hi:  # constant mask, the common case
        classes = [] if lo == background_index else [lo]
    else:
        counts = np.bincount(mask.reshape(-1).astype(np.int64))
        present = np.nonzero(counts)[0]
        classes = [int(c) for c in present if c != background_index]
    if len(classes) != 1:
        raise ValueError(f"expected a single-labeled mask, found classes {classes}")
    return classes[0]


def _random_crop(image, mask, out_h, out_w, rng, descriptors=None, tag=None):
    h, w = mask.shape
    if h < out_h or w < out_w:
        raise ValueError(f"source {h}x{w} smaller than required crop {out_h}x{out_w}")
    top = int(rng.integers(0, h - out_h + 1))
    left = int(rng.integers(0, w - out_w + 1))
    if descriptors is not None:
        desc = {"op": "crop", "top": top, "left": left, "height": out_h, "width": out_w}
        if tag is not None:
            desc["grid"] = tag
        descriptors.append(desc)
    return (image[top:top + out_h, left:left + out_w],
            mask[top:top + out_h, left:left + out_w])


def build_gridded_image(
    tiles: list[tuple[np.ndarray, np.ndarray]],
    config: SynthesisConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Splice m^2 single-tissue tiles into one HxW image in raster order.

    Tiles are randomly cropped to ceil(H/m) x ceil(W/m) cells; when m does not
    divide H or W the bottom/right cells are truncated to fit.
    """
    m = config.m
    H, W = config.out_height, config.out_width
    if len(tiles) != m * m:
        raise ValueError(f"need {m * m} tiles for m={m}, got {len(tiles)}")
    cell_h = math.ceil(H / m)
    cell_w = math.ceil(W / m)

    out_img = np.zeros((H, W, 3), dtype=np.uint8)
    out_mask = np.zeros((H, W), dtype=np.uint8)
    for idx, (img, mask) in enumerate(tiles):
        _check_pair(img, mask, f"tile {idx}")
        single_label_class(mask, config.background_index)
        crop_img, crop_mask = _random_crop(img, mask, cell_h, cell_w, rng)
        r, c = divmod(idx, m)
        r0, c0 = r * cell_h, c * cell_w
        r1, c1 = min(r0 + cell_h, H), min(c0 + cell_w, W)
        out_img[r0:r1, c0:c1] = crop_img[:r1 - r0, :c1 - c0]
        out_mask[r0:r1, c0:c1] = crop_mask[:r1 - r0, :c1 - c0]
    return out_img, out_mask


def anchor_range(frac_low: float, frac_high: float, extent: int) -> tuple[int, int]:
    """Inclusive integer bounds for an anchor strictly inside (lo*E, hi*E)."""
    lo = int(math.floor(frac_low * extent)) + 1
    hi = int(math.ceil(frac_high * extent)) - 1
    if lo > hi:
        raise ValueError(
            f"no integer anchor in ({frac_low}*{extent}, {frac_high}*{extent})")
    return lo, hi


def mosaic_synthesize(
    grids: list[tuple[np.ndarray, np.ndarray]],
    config: SynthesisConfig,
    rng: np.random.Generator,
    source_ids: list[str] | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, SynthesisRecipe]:
    """Assemble four grids around a random anchor point.

    The anchor (h_a, w_a) is drawn uniformly over the integers strictly inside
    (alpha*H, beta*H) x (alpha*W, beta*W); the four quadrants are filled by
    random crops of grids 1..4 in top-left, bottom-left, top-right,
    bottom-right order, and the mask is assembled identically.
    """
    if len(grids) != 4:
        raise ValueError(f"mosaic needs 4 grids, got {len(grids)}")
    H, W = config.out_height, config.out_width
    for k, (img, mask) in enumerate(grids):
        _check_pair(img, mask, f"grid {k}")
        if mask.shape[0] < H or mask.shape[1] < W:
            raise ValueError(f"grid {k} is {mask.shape}, smaller than {H}x{W}")

    h_lo, h_hi = anchor_range(config.alpha, config.beta, H)
    w_lo, w_hi = anchor_range(config.alpha, config.beta, W)
    h_a = int(rng.integers(h_lo, h_hi + 1))
    w_a = int(rng.integers(w_lo, w_hi + 1))

    quadrants = [  # (rows, cols, row offset, col offset) per Eq-style corner layout
        (h_a, w_a, 0, 0),
        (H - h_a, w_a, h_a, 0),
        (h_a, W - w_a, 0, w_a),
        (H - h_a, W - w_a, h_a, w_a),
    ]
    descriptors: list[dict] = []
    out_img = np.zeros((H, W, 3), dtype=np.uint8)
    out_mask = np.zeros((H, W), dtype=np.uint8)
    for k, ((img, mask), (qh, qw, r0, c0)) in enumerate(zip(grids, quadrants)):
        crop_img, crop_mask = _random_crop(img, mask, qh, qw, rng, descriptors, tag=k)
        out_img[r0:r0 + qh, c0:c0 + qw] = crop_img
        out_mask[r0:r0 + qh, c0:c0 + qw] = crop_mask

    recipe = SynthesisRecipe(
        strategy="mosaic",
        source_ids=list(source_ids or []),
        seed=seed,
        anchor=(h_a, w_a),
        augmentations=descriptors,
    )
    return out_img, out_mask, recipe


def mix_by_mask(region: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Pixelwise selection: `first` where the binary region is set, `second`
    elsewhere. Works for HxWx3 images and HxW label masks alike."""
    if first.shape != second.shape:
        raise ValueError(f"shape mismatch: {first.shape} vs {second.shape}")
    if region.shape != first.shape[:2]:
        raise ValueError(f"region {region.shape} does not match {first.shape[:2]}")
    sel = region[:, :, None] if first.ndim == 3 else region
    return np.where(sel, first, second)


def bezier_synthesize(
    img1: np.ndarray,
    mask1: np.ndarray,
    img2: np.ndarray,
    mask2: np.ndarray,
    config: SynthesisConfig,
    rng: np.random.Generator,
    source_ids: list[str] | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, SynthesisRecipe]:
    """Mix two single-tissue images through a random smooth closed mask.

    Output pixels are taken verbatim from img1 inside the rasterized loop and
    from img2 outside (no blending); the label mask is composed the same way.
    """
    _check_pair(img1, mask1, "first")
    _check_pair(img2, mask2, "second")
    H, W = config.out_height, config.out_width
    if mask1.shape != (H, W) or mask2.shape != (H, W):
        raise ValueError(
            f"bezier inputs must be {H}x{W}, got {mask1.shape} and {mask2.shape}")
    single_label_class(mask1, config.background_index)
    single_label_class(mask2, config.background_index)

    loop = random_loop(rng, config.n_bezier_anchors)
    region = rasterize_loop(loop, H, W, config.samples_per_segment).bits
    out_img = mix_by_mask(region, img1, img2)
    out_mask = mix_by_mask(region, mask1, mask2)

    recipe = SynthesisRecipe(
        strategy="bezier",
        source_ids=list(source_ids or []),
        seed=seed,
        loop=serialize_loop(loop),
    )
    return out_img, out_mask, recipe


# ---------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentPolicy:
    """Which random transforms to sample and their ranges.

    Label masks are always resampled nearest-neighbor; pixels bilinearly.
    Rotation and shift fill exposed regions by reflection.
    """

    p_hflip: float = 0.5
    p_vflip: float = 0.5
    right_angle_rotate: bool = False          # sample k*90 degrees exactly
    rotate_range: tuple[float, float] | None = None   # degrees, arbitrary angle
    scale_range: tuple[float, float] | None = None
    max_shift: int = 0
    crop_size: tuple[int, int] | None = None


IDENTITY_POLICY = AugmentPolicy(p_hflip=0.0, p_vflip=0.0)


def _warp_rotate(image, mask, degrees):
    h, w = mask.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    mat = cv2.getRotationMatrix2D(center, degrees, 1.0)
    img_out = cv2.warpAffine(image, mat, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REFLECT_101)
    mask_out = cv2.warpAffine(mask, mat, (w, h), flags=cv2.INTER_NEAREST,
                              borderMode=cv2.BORDER_REFLECT_101)
    return img_out, mask_out


def _shift_reflect(arr, dy, dx):
    h, w = arr.shape[:2]
    if abs(dy) >= h or abs(dx) >= w:
        raise ValueError(f"shift ({dy},{dx}) too large for {h}x{w}")
    pad = [(abs(dy), abs(dy)), (abs(dx), abs(dx))] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad, mode="reflect")
    top = abs(dy) - dy
    left = abs(dx) - dx
    return padded[top:top + h, left:left + w]


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    policy: AugmentPolicy = IDENTITY_POLICY,
) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Apply a sampled flip/rotate/scale/shift/crop sequence to both arrays.

    Returns the transformed pair plus the descriptors of the transforms that
    were actually applied, in order.
    """
    _check_pair(image, mask)
    descriptors: list[dict] = []

    if policy.p_hflip > 0 and rng.random() < policy.p_hflip:
        image, mask = image[:, ::-1].copy(), mask[:, ::-1].copy()
        descriptors.append({"op": "hflip"})
    if policy.p_vflip > 0 and rng.random() < policy.p_vflip:
        image, mask = image[::-1].copy(), mask[::-1].copy()
        descriptors.append({"op": "vflip"})
    if policy.right_angle_rotate:
        k = int(rng.integers(0, 4))
        if k:
            image, mask = np.rot90(image, k).copy(), np.rot90(mask, k).copy()
            descriptors.append({"op": "rot90", "k": k})
    if policy.rotate_range is not None:
        degrees = float(rng.uniform(*policy.rotate_range))
        image, mask = _warp_rotate(image, mask, degrees)
        descriptors.append({"op": "rotate", "degrees": degrees})
    if policy.scale_range is not None:
        factor = float(rng.uniform(*policy.scale_range))
        h, w = mask.shape
        nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
        image = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_LINEAR)
        mask = cv2.resize(mask, (nw, nh), interpolation=cv2.INTER_NEAREST)
        descriptors.append({"op": "scale", "factor": factor})
    if policy.max_shift > 0:
        dy, dx = (int(v) for v in rng.integers(-policy.max_shift, policy.max_shift + 1, 2))
        if dy or dx:
            image = _shift_reflect(image, dy, dx)
            mask = _shift_reflect(mask, dy, dx)
            descriptors.append({"op": "shift", "dy": dy, "dx": dx})
    if policy.crop_size is not None:
        ch, cw = policy.crop_size
        if mask.shape[0] < ch or mask.shape[1] < cw:
            raise ValueError(
                f"crop {ch}x{cw} larger than image {mask.shape} after transforms")
        image, mask = _random_crop(image, mask, ch, cw, rng, descriptors)
    return image, mask, descriptors


# ---------------------------------------------------------------------------
# resizing

def _axis_coords(out_n: int, in_n: int):
    src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
    return np.clip(src, 0.0, in_n - 1.0)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel center alignment (images only; label
    masks go through resize_nearest so indices stay categorical)."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dims must be positive")
    h, w = image.shape[:2]
    ys = _axis_coords(out_h, h)
    xs = _axis_coords(out_w, w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).reshape(-1, 1)
    fx = (xs - x0).reshape(1, -1)
    if image.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]

    arr = image.astype(np.float64)
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(image.dtype)
    return out.astype(image.dtype)


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dims must be positive")
    h, w = mask.shape[:2]
    ys = np.clip(np.floor(_axis_coords(out_h, h) + 0.5), 0, h - 1).astype(np.intp)
    xs = np.clip(np.floor(_axis_coords(out_w, w) + 0.5), 0, w - 1).astype(np.intp)
    return mask[ys][:, xs].copy()
