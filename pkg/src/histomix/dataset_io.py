"""Manifest-driven dataset indexing and synthesized-sample persistence.

A dataset lives in one directory with a `manifest.jsonl`: the first line is a
header object {"class_names": [...], "background_index": N}, every following
line one entry {"id", "image", "mask" (optional), "labels"} with paths
relative to the manifest. Masks are single-channel index PNGs (class indices
0..C-1 plus the background index) so there is no color-to-class ambiguity; a
palette export exists purely for eyeballing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .metrics import derive_image_labels
from .synthesis import SynthesisRecipe

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "read_manifest",
    "write_manifest",
    "index_single_label",
    "read_image",
    "read_mask",
    "write_image",
    "write_mask",
    "write_palette_mask",
    "write_sample",
    "read_recipe",
]

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


@dataclass
class ManifestEntry:
    id: str
    image: str
    labels: list[int]
    mask: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "image": self.image, "labels": self.labels}
        if self.mask is not None:
            d["mask"] = self.mask
        return d


@dataclass
class DatasetManifest:
    class_names: list[str]
    background_index: int = 255
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(f"no manifest entry {entry_id!r}")

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.image

    def mask_path(self, entry: ManifestEntry) -> Path | None:
        return self.root / entry.mask if entry.mask is not None else None


def _header_line(manifest: DatasetManifest) -> str:
    return json.dumps(
        {"class_names": manifest.class_names, "background_index": manifest.background_index},
        sort_keys=True)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header_line(manifest) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if "class_names" not in header:
        raise ValueError(f"{path}:1: manifest header must declare class_names")
    manifest = DatasetManifest(
        class_names=list(header["class_names"]),
        background_index=int(header.get("background_index", 255)),
        root=path.parent,
    )
    seen: set[str] = set()
    for lineno, ln in enumerate(lines[1:], start=2):
        d = json.loads(ln)
        labels = [int(v) for v in d["labels"]]
        if len(labels) != manifest.num_classes:
            raise ValueError(
                f"{path}:{lineno}: entry {d.get('id')!r} has {len(labels)} labels, "
                f"expected {manifest.num_classes}")
        if d["id"] in seen:
            raise ValueError(f"{path}:{lineno}: duplicate entry id {d['id']!r}")
        seen.add(d["id"])
        manifest.entries.append(
            ManifestEntry(id=d["id"], image=d["image"], labels=labels, mask=d.get("mask")))
    return manifest


def index_single_label(manifest: DatasetManifest) -> dict[int, list[str]]:
    """Per-class pools of entry ids whose label vector is exactly one-hot."""
    pools: dict[int, list[str]] = {c: [] for c in range(manifest.num_classes)}
    for e in manifest.entries:
        if any(v not in (0, 1) for v in e.labels):
            raise ValueError(f"entry {e.id!r} has non-binary labels {e.labels}")
        if sum(e.labels) == 1:
            pools[e.labels.index(1)].append(e.id)
    for c, ids in pools.items():
        if not ids:
            log.warning("class %r has no single-labeled images", manifest.class_names[c])
    return pools


# ---------------------------------------------------------------------------
# pixel payloads

def read_image(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if arr.size == 0:
        raise ValueError(f"{path}: empty image")
    return arr


def read_mask(path: str | Path, num_classes: int | None = None,
              background_index: int = 255) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.size == 0:
        raise ValueError(f"{path}: empty mask")
    if num_classes is not None:
        bad = (arr >= num_classes) & (arr != background_index)
        if bad.any():
            raise ValueError(
                f"{path}: mask index {int(arr[bad][0])} outside 0..{num_classes - 1} "
                f"and not background ({background_index})")
    return arr


# fast zlib level: synthesis is encode-bound and the corpus is throwaway
_PNG_LEVEL = 1


def write_image(image: np.ndarray, path: str | Path) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected HxWx3 uint8 image, got {image.shape} {image.dtype}")
    PILImage.fromarray(image, mode="RGB").save(path, format="PNG",
                                               compress_level=_PNG_LEVEL)


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    if mask.ndim != 2 or mask.dtype != np.uint8:
        raise ValueError(f"expected HxW uint8 mask, got {mask.shape} {mask.dtype}")
    PILImage.fromarray(mask, mode="L").save(path, format="PNG",
                                            compress_level=_PNG_LEVEL)


_PALETTE_BASE = [
    (205, 51, 51), (0, 255, 0), (65, 105, 225), (255, 165, 0),
    (148, 0, 211), (0, 206, 209), (255, 20, 147), (139, 69, 19),
]


def write_palette_mask(mask: np.ndarray, path: str | Path,
                       background_index: int = 255) -> None:
    """Visualization-only color export; the index PNG stays authoritative."""
    pal = np.full((256, 3), 255, dtype=np.uint8)  # background and unknowns: white
    for c in range(min(background_index, 256)):
        pal[c] = _PALETTE_BASE[c % len(_PALETTE_BASE)]
    im = PILImage.fromarray(mask, mode="P")
    im.putpalette(pal.reshape(-1).tolist())
    im.save(path, format="PNG")


# ---------------------------------------------------------------------------
# synthesized-sample persistence

def write_sample(
    image: np.ndarray,
    mask: np.ndarray,
    recipe: SynthesisRecipe,
    out_dir: str | Path,
    class_names: list[str],
    background_index: int = 255,
    sample_id: str | None = None,
) -> str:
    """Persist one synthesized sample: `<id>.png`, `<id>_mask.png`,
    `<id>.recipe.json`, plus an appended manifest row with labels derived
    from the mask. Returns the entry id."""
    if mask.shape != image.shape[:2]:
        raise ValueError(f"image/mask misaligned: {image.shape[:2]} vs {mask.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample_id = sample_id or f"{recipe.strategy}_{recipe.seed:016x}"

    image_path = out_dir / f"{sample_id}.png"
    if image_path.exists():
        raise FileExistsError(f"sample id collision: {image_path} already exists")
    write_image(image, image_path)
    write_mask(mask, out_dir / f"{sample_id}_mask.png")
    with (out_dir / f"{sample_id}.recipe.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(recipe.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    labels = derive_image_labels(mask, len(class_names), background_index)
    entry = ManifestEntry(
        id=sample_id,
        image=f"{sample_id}.png",
        labels=[int(v) for v in labels],
        mask=f"{sample_id}_mask.png",
    )
    manifest_path = out_dir / MANIFEST_NAME
    if not manifest_path.exists():
        header = DatasetManifest(class_names=list(class_names),
                                 background_index=background_index)
        manifest_path.write_text(_header_line(header) + "\n", encoding="utf-8")
    with manifest_path.open("a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
    return sample_id


def read_recipe(path: str | Path) -> SynthesisRecipe:
    with Path(path).open(encoding="utf-8") as fh:
        return SynthesisRecipe.from_dict(json.load(fh))
