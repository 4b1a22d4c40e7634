"""End-to-end synthesis runs: source selection, per-sample seeding, optional
authenticity filtering with regeneration, deterministic parallel generation,
and exact replay of persisted samples from their recipes.

Every candidate is addressed by a global attempt index. Its seed derives from
(run seed, index) alone, and source selection / geometry use two independent
streams of that seed, so outputs never depend on worker count or schedule and
a recipe (sample seed + source ids) replays bit-identically.
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset_io import (
    DatasetManifest,
    read_manifest,
    read_image,
    read_mask,
    index_single_label,
    write_sample,
)
from .filtering import (
    apply_filter,
    AuthenticityScore,
    compute_reference_stats,
    heuristic_score,
    load_external_scores,
)
from .synthesis import (
    AugmentPolicy,
    SynthesisConfig,
    SynthesisRecipe,
    augment,
    bezier_synthesize,
    build_gridded_image,
    mosaic_synthesize,
    resize_bilinear,
    resize_nearest,
)

__all__ = [
    "RunConfig",
    "PipelineError",
    "SourceStore",
    "sample_seed",
    "generate_candidate",
    "replay_recipe",
    "run_synthesis",
    "MOSAIC_GRID_POLICY",
]

# Grid preprocessing ahead of the mosaic assembly: flips, full-circle rotation
# with reflected borders, mild upscaling (never below the target size), and a
# small shift. Scale stays >= 1 so grids always satisfy the mosaic size bound.
MOSAIC_GRID_POLICY = AugmentPolicy(
    p_hflip=0.5,
    p_vflip=0.5,
    rotate_range=(0.0, 360.0),
    scale_range=(1.0, 1.25),
    max_shift=8,
)

_SELECT_STREAM = 0
_GEOM_STREAM = 1


class PipelineError(RuntimeError):
    """Run-level failure (e.g. kept-count unreachable); partial output stays."""

    def __init__(self, message: str, summary: dict | None = None):
        super().__init__(message)
        self.summary = summary or {}


@dataclass
class RunConfig:
    manifest_path: Path
    out_dir: Path
    strategy: str = "mosaic"
    count: int = 10
    seed: int = 0
    filter_mode: str = "none"          # none | external | heuristic
    scores_path: Path | None = None
    threshold: float = 0.5
    workers: int = 1
    max_attempts_factor: int = 10
    bezier_classes: list[str] | None = None
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)

    def __post_init__(self):
        self.manifest_path = Path(self.manifest_path)
        self.out_dir = Path(self.out_dir)
        if self.strategy not in ("mosaic", "bezier"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.filter_mode not in ("none", "external", "heuristic"):
            raise ValueError(f"unknown filter mode {self.filter_mode!r}")
        if self.filter_mode == "external" and self.scores_path is None:
            raise ValueError("external filtering needs --scores")
        if self.count <= 0:
            raise ValueError("count must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def sample_seed(run_seed: int, index: int) -> int:
    """Stable 64-bit per-candidate seed from the run seed and attempt index."""
    ss = np.random.SeedSequence([run_seed, index])
    return int(ss.generate_state(1, np.uint64)[0])


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


class SourceStore:
    """Lazy id -> (image, mask) loader over a manifest.

    Single-tissue entries without a mask file get a constant mask of their
    labeled class, which is exact by definition for such patches.
    """

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, entry_id: str) -> tuple[np.ndarray, np.ndarray]:
        if entry_id not in self._cache:
            entry = self.manifest.entry(entry_id)
            image = read_image(self.manifest.image_path(entry))
            mask_path = self.manifest.mask_path(entry)
            if mask_path is not None:
                mask = read_mask(mask_path, self.manifest.num_classes,
                                 self.manifest.background_index)
            else:
                if sum(entry.labels) != 1:
                    raise ValueError(
                        f"entry {entry_id!r} has no mask and is not single-labeled")
                mask = np.full(image.shape[:2], entry.labels.index(1), dtype=np.uint8)
            self._cache[entry_id] = (image, mask)
        return self._cache[entry_id]


def _fit_tile(image, mask, min_h, min_w, descriptors, tag):
    """Upscale a source that is too small for the required crop."""
    h, w = mask.shape
    if h >= min_h and w >= min_w:
        return image, mask
    factor = max(min_h / h, min_w / w)
    nh, nw = math.ceil(h * factor), math.ceil(w * factor)
    descriptors.append({"op": "resize", "source": tag, "height": nh, "width": nw})
    return resize_bilinear(image, nh, nw), resize_nearest(mask, nh, nw)


def _fit_exact(image, mask, out_h, out_w, rng, descriptors, tag):
    """Bring a source to exactly out_h x out_w: random-crop when large enough,
    otherwise resize (bilinear pixels, nearest labels)."""
    h, w = mask.shape
    if h >= out_h and w >= out_w:
        top = int(rng.integers(0, h - out_h + 1))
        left = int(rng.integers(0, w - out_w + 1))
        descriptors.append({"op": "crop", "source": tag, "top": top, "left": left,
                            "height": out_h, "width": out_w})
        return (image[top:top + out_h, left:left + out_w],
                mask[top:top + out_h, left:left + out_w])
    descriptors.append({"op": "resize", "source": tag, "height": out_h, "width": out_w})
    return resize_bilinear(image, out_h, out_w), resize_nearest(mask, out_h, out_w)


def _mosaic_pool(pools: dict[int, list[str]]) -> list[str]:
    ids = [i for c in sorted(pools) for i in pools[c]]
    if not ids:
        raise ValueError("no single-labeled source images available")
    return ids


def _bezier_pool(pools: dict[int, list[str]], manifest: DatasetManifest,
                 class_filter: list[str] | None) -> list[str]:
    if class_filter is None:
        allowed = sorted(pools)
    else:
        allowed = [manifest.class_names.index(name) for name in class_filter]
    ids = [i for c in allowed for i in pools[c]]
    if len(ids) < 2:
        raise ValueError(f"need >= 2 single-labeled sources in classes {allowed}, have {len(ids)}")
    return ids


def select_sources(strategy: str, pools: dict[int, list[str]],
                   manifest: DatasetManifest, config: SynthesisConfig,
                   rng: np.random.Generator,
                   bezier_classes: list[str] | None = None) -> list[str]:
    if strategy == "mosaic":
        ids = _mosaic_pool(pools)
        n = 4 * config.m * config.m
        # with replacement: grids may legitimately share source patches
        return [ids[int(rng.integers(0, len(ids)))] for _ in range(n)]
    ids = _bezier_pool(pools, manifest, bezier_classes)
    pick = rng.choice(len(ids), size=2, replace=False)
    return [ids[int(pick[0])], ids[int(pick[1])]]


def synthesize_from_sources(
    strategy: str,
    sources: list[tuple[str, np.ndarray, np.ndarray]],
    seed: int,
    config: SynthesisConfig,
) -> tuple[np.ndarray, np.ndarray, SynthesisRecipe]:
    """Deterministic synthesis from resolved sources; all randomness comes
    from the geometry stream of `seed`. Used by generation and by replay."""
    rng = _stream(seed, _GEOM_STREAM)
    source_ids = [sid for sid, _, _ in sources]
    pre: list[dict] = []

    if strategy == "mosaic":
        m2 = config.m * config.m
        if len(sources) != 4 * m2:
            raise ValueError(f"mosaic needs {4 * m2} sources, got {len(sources)}")
        cell_h = math.ceil(config.out_height / config.m)
        cell_w = math.ceil(config.out_width / config.m)
        grids = []
        for g in range(4):
            tiles = []
            for k in range(m2):
                sid, img, mask = sources[g * m2 + k]
                img, mask = _fit_tile(img, mask, cell_h, cell_w, pre, f"grid{g}.tile{k}")
                tiles.append((img, mask))
            grid_img, grid_mask = build_gridded_image(tiles, config, rng)
            grid_img, grid_mask, descs = augment(grid_img, grid_mask, rng, MOSAIC_GRID_POLICY)
            pre.extend({**d, "grid": g} for d in descs)
            grids.append((grid_img, grid_mask))
        image, mask, recipe = mosaic_synthesize(grids, config, rng, source_ids, seed)
    else:
        if len(sources) != 2:
            raise ValueError(f"bezier needs 2 sources, got {len(sources)}")
        fitted = []
        for tag, (sid, img, mask) in enumerate(sources):
            img, mask = _fit_exact(img, mask, config.out_height, config.out_width,
                                   rng, pre, f"src{tag}")
            fitted.append((img, mask))
        (i1, m1), (i2, m2_) = fitted
        image, mask, recipe = bezier_synthesize(i1, m1, i2, m2_, config, rng,
                                                source_ids, seed)
    recipe.augmentations = pre + recipe.augmentations
    return image, mask, recipe


def generate_candidate(
    index: int,
    run_seed: int,
    strategy: str,
    pools: dict[int, list[str]],
    store: SourceStore,
    config: SynthesisConfig,
    bezier_classes: list[str] | None = None,
) -> tuple[np.ndarray, np.ndarray, SynthesisRecipe]:
    seed = sample_seed(run_seed, index)
    rng_select = _stream(seed, _SELECT_STREAM)
    ids = select_sources(strategy, pools, store.manifest, config, rng_select,
                         bezier_classes)
    sources = [(sid, *store.get(sid)) for sid in ids]
    return synthesize_from_sources(strategy, sources, seed, config)


def replay_recipe(
    recipe: SynthesisRecipe,
    store: SourceStore,
    config: SynthesisConfig,
) -> tuple[np.ndarray, np.ndarray, SynthesisRecipe]:
    """Regenerate a persisted sample from its recipe and the source dataset.

    `config` must match the generating run (dims, anchor bounds, grid order,
    loop anchors, background index); the recipe carries the per-sample seed
    and source ids, not the run configuration.
    """
    sources = [(sid, *store.get(sid)) for sid in recipe.source_ids]
    return synthesize_from_sources(recipe.strategy, sources, recipe.seed, config)


# ---------------------------------------------------------------------------
# run loop

_WORKER: dict = {}


def _worker_init(manifest_path, run_seed, strategy, config, bezier_classes):
    manifest = read_manifest(manifest_path)
    _WORKER.update(
        pools=index_single_label(manifest),
        store=SourceStore(manifest),
        run_seed=run_seed,
        strategy=strategy,
        config=config,
        bezier_classes=bezier_classes,
    )


def _worker_generate(index: int):
    return generate_candidate(
        index, _WORKER["run_seed"], _WORKER["strategy"], _WORKER["pools"],
        _WORKER["store"], _WORKER["config"], _WORKER["bezier_classes"])


def _build_scorer(cfg: RunConfig, manifest: DatasetManifest, store: SourceStore):
    if cfg.filter_mode == "none":
        return lambda sid, image: 1.0, 0
    if cfg.filter_mode == "external":
        table = {s.sample_id: s.p_real for s in load_external_scores(cfg.scores_path)}
        missing = {"n": 0}

        def external(sid, image):
            if sid not in table:
                missing["n"] += 1
                return 0.0
            return table[sid]

        return external, missing
    images = [store.get(e.id)[0] for e in manifest.entries]
    stats = compute_reference_stats(images)

    def heuristic(sid, image):
        return heuristic_score([image], stats, [sid])[0].p_real

    return heuristic, 0


def run_synthesis(cfg: RunConfig, log=lambda msg: print(msg, file=sys.stderr)) -> dict:
    """Generate/filter/persist until `count` samples are kept (or attempts run
    out). Returns the run summary; raises PipelineError when the target is
    unreachable, leaving partial output in place."""
    manifest = read_manifest(cfg.manifest_path)
    pools = index_single_label(manifest)
    store = SourceStore(manifest)
    # fail fast on unusable pools
    if cfg.strategy == "mosaic":
        _mosaic_pool(pools)
    else:
        _bezier_pool(pools, manifest, cfg.bezier_classes)
    synth_cfg = replace(cfg.synthesis, background_index=manifest.background_index)
    scorer, _missing = _build_scorer(cfg, manifest, store)

    max_attempts = cfg.count * cfg.max_attempts_factor
    batch_size = 32  # fixed so attempt accounting is worker-count independent
    kept = attempts = discarded = 0
    threshold = cfg.threshold

    executor = None
    if cfg.workers > 1:
        executor = ProcessPoolExecutor(
            max_workers=cfg.workers,
            initializer=_worker_init,
            initargs=(cfg.manifest_path, cfg.seed, cfg.strategy, synth_cfg,
                      cfg.bezier_classes),
        )
    try:
        index = 0
        while kept < cfg.count and index < max_attempts:
            batch = list(range(index, min(index + batch_size, max_attempts)))
            index = batch[-1] + 1
            if executor is not None:
                results = executor.map(_worker_generate, batch,
                                       chunksize=max(1, batch_size // cfg.workers))
            else:
                results = (
                    generate_candidate(i, cfg.seed, cfg.strategy, pools, store,
                                       synth_cfg, cfg.bezier_classes)
                    for i in batch
                )
            for i, (image, mask, recipe) in zip(batch, results):
                attempts += 1
                sid = f"{cfg.strategy}_{i:06d}"
                decision = apply_filter(
                    [AuthenticityScore(sid, scorer(sid, image))], threshold)[0]
                if decision.kept and kept < cfg.count:
                    write_sample(image, mask, recipe, cfg.out_dir,
                                 manifest.class_names, manifest.background_index,
                                 sample_id=sid)
                    kept += 1
                elif not decision.kept:
                    discarded += 1
            log(f"[synth] kept {kept}/{cfg.count} after {attempts} attempts")
    finally:
        if executor is not None:
            executor.shutdown()

    summary = {
        "strategy": cfg.strategy,
        "out_dir": str(cfg.out_dir),
        "requested": cfg.count,
        "kept": kept,
        "generated": attempts,
        "discarded": discarded,
        "attempts": attempts,
        "seed": cfg.seed,
    }
    if kept < cfg.count:
        raise PipelineError(
            f"kept only {kept}/{cfg.count} after {attempts} attempts", summary)
    return summary
