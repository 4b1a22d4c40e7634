"""Small deterministic stand-in dataset of single-tissue patches.

Real WSSS datasets cannot ship with the toolkit, so demos and tests build a
pink/purple toy corpus whose per-class color statistics are distinct enough
for the heuristic authenticity scorer to behave sensibly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset_io import DatasetManifest, ManifestEntry, write_image, write_manifest
from .synthesis import resize_bilinear

__all__ = ["make_toy_dataset", "TOY_CLASSES"]

TOY_CLASSES = ("TUM", "STR", "NEC", "LYM")

_BASE_COLORS = {
    "TUM": (196, 130, 176),
    "STR": (228, 176, 198),
    "NEC": (166, 120, 158),
    "LYM": (138, 96, 168),
}


def _toy_patch(rng: np.random.Generator, h: int, w: int, base: tuple[int, int, int]) -> np.ndarray:
    color = np.asarray(base, dtype=np.float64) + rng.uniform(-12, 12, size=3)
    canvas = np.tile(color, (h, w, 1))
    # low-frequency texture: a coarse random field blown up bilinearly
    coarse = rng.uniform(-22, 22, size=(8, 8, 3))
    canvas += resize_bilinear(coarse, h, w)
    canvas += rng.normal(0.0, 4.0, size=(h, w, 3))
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def make_toy_dataset(
    out_dir: str | Path,
    per_class: int = 12,
    size_range: tuple[int, int] = (224, 256),
    seed: int = 0,
    class_names: tuple[str, ...] = TOY_CLASSES,
    background_index: int = 255,
) -> Path:
    """Write `per_class` single-tissue patches per class plus a manifest.

    Entries carry one-hot labels and no mask files; their masks are implied
    constant. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(list(class_names), background_index, root=out_dir)
    for c, name in enumerate(class_names):
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, c, i]))
            h = int(rng.integers(size_range[0], size_range[1] + 1))
            w = int(rng.integers(size_range[0], size_range[1] + 1))
            patch = _toy_patch(rng, h, w, _BASE_COLORS.get(name, (190, 140, 180)))
            entry_id = f"{name.lower()}_{i:03d}"
            write_image(patch, out_dir / f"{entry_id}.png")
            labels = [1 if k == c else 0 for k in range(len(class_names))]
            manifest.entries.append(
                ManifestEntry(id=entry_id, image=f"{entry_id}.png", labels=labels))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest, manifest_path)
    return manifest_path
