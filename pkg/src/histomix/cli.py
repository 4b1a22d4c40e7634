"""Command-line entry points wiring the library into reproducible pipelines.

Machine-readable results (JSON) go to stdout, progress and diagnostics to
stderr. Exit codes: 0 success, 1 validation error, 2 runtime/IO error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import dataset_io, losses, metrics, tiling
from .pipeline import PipelineError, RunConfig, run_synthesis
from .synthesis import SynthesisConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _load_config_file(path: str | None) -> dict[str, str]:
    """`key = value` lines; blank lines and # comments ignored."""
    if path is None:
        return {}
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve(args_value, cfg: dict, key: str, default, cast):
    """Flag wins over config file wins over default."""
    if args_value is not None:
        return args_value
    if key in cfg:
        return cast(cfg[key])
    return default


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    cfg = _load_config_file(args.config)
    synth = SynthesisConfig(
        out_height=_resolve(args.height, cfg, "height", 224, int),
        out_width=_resolve(args.width, cfg, "width", 224, int),
        alpha=_resolve(args.alpha, cfg, "alpha", 0.2, float),
        beta=_resolve(args.beta, cfg, "beta", 0.8, float),
        m=_resolve(args.m, cfg, "m", 2, int),
        n_bezier_anchors=_resolve(args.anchors, cfg, "anchors", 5, int),
        seed=_resolve(args.seed, cfg, "seed", 0, int),
    )
    bezier_classes = _resolve(args.bezier_classes, cfg, "bezier_classes", None, _csv_list)
    if isinstance(bezier_classes, str):
        bezier_classes = _csv_list(bezier_classes)
    run = RunConfig(
        manifest_path=Path(_resolve(args.manifest, cfg, "manifest", None, str) or ""),
        out_dir=Path(_resolve(args.out, cfg, "out", None, str) or ""),
        strategy=_resolve(args.strategy, cfg, "strategy", "mosaic", str),
        count=_resolve(args.count, cfg, "count", 10, int),
        seed=synth.seed,
        filter_mode=_resolve(args.filter, cfg, "filter", "none", str),
        scores_path=_resolve(args.scores, cfg, "scores", None, Path),
        threshold=_resolve(args.threshold, cfg, "threshold", 0.5, float),
        workers=_resolve(args.workers, cfg, "workers", 1, int),
        max_attempts_factor=_resolve(None, cfg, "max_attempts_factor", 10, int),
        bezier_classes=bezier_classes,
        synthesis=synth,
    )
    if not run.manifest_path.name:
        raise ValueError("--manifest is required (flag or config)")
    if not run.out_dir.name:
        raise ValueError("--out is required (flag or config)")
    if run.scores_path is not None:
        run.scores_path = Path(run.scores_path)
    try:
        summary = run_synthesis(run)
    except PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        print(json.dumps(err.summary, sort_keys=True))
        return EXIT_RUNTIME
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _read_class_file(path: str) -> tuple[list[str], int]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return list(payload["class_names"]), int(payload.get("background_index", 255))


def cmd_eval(args) -> int:
    class_names, background = _read_class_file(args.classes)
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    gt_files = sorted(gt_dir.glob("*.png"))
    if not gt_files:
        raise ValueError(f"no ground-truth masks (*.png) in {gt_dir}")
    cm = metrics.ConfusionMatrix(len(class_names), background)
    for gt_path in gt_files:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction for {gt_path.name}: {pred_path}")
        gt = dataset_io.read_mask(gt_path, len(class_names), background)
        pred = dataset_io.read_mask(pred_path, len(class_names), background)
        metrics.accumulate(pred, gt, cm)
    report = metrics.compute_report(cm)
    payload = report.to_dict()
    payload["class_names"] = class_names
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# permtest

def _read_numbers(path: str) -> np.ndarray:
    values = [float(tok) for tok in Path(path).read_text(encoding="utf-8").split()]
    if not values:
        raise ValueError(f"{path}: no numeric values")
    return np.asarray(values)


def cmd_permtest(args) -> int:
    a = _read_numbers(args.file_a)
    b = _read_numbers(args.file_b)
    p = metrics.permutation_test(a, b, max_exact=args.max_exact,
                                 mc_iters=args.mc_iters, seed=args.seed)
    print(json.dumps({"p_value": p, "n_a": int(a.size), "n_b": int(b.size)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# losscheck

def cmd_losscheck(args) -> int:
    report = losses.run_gradient_checks(n_trials=args.trials, seed=args.seed,
                                        tol=args.tol)
    width = max(len(k) for k in report)
    print(f"{'loss'.ljust(width)}  max_rel_err   status", file=sys.stderr)
    for name, row in report.items():
        status = "pass" if row["passed"] else "FAIL"
        print(f"{name.ljust(width)}  {row['max_rel_err']:.3e}     {status}",
              file=sys.stderr)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK if all(r["passed"] for r in report.values()) else EXIT_VALIDATION


# ---------------------------------------------------------------------------
# fuse

_TILE_RE = re.compile(r"^tile_(\d+)_(\d+)(?:_v(\d+))?\.bin$")


def _collect_tiles(directory: Path, use_tta: bool):
    groups: dict[tuple[int, int], list[tuple[int, np.ndarray]]] = {}
    for path in sorted(directory.glob("tile_*.bin")):
        match = _TILE_RE.match(path.name)
        if not match:
            raise ValueError(f"unrecognized tile file name {path.name!r}")
        r, c = int(match.group(1)), int(match.group(2))
        code = int(match.group(3)) if match.group(3) is not None else None
        if use_tta and code is None:
            raise ValueError(f"{path.name}: --tta expects tile_R_C_vK.bin files")
        if not use_tta and code is not None:
            raise ValueError(f"{path.name}: variant-coded file without --tta")
        groups.setdefault((r, c), []).append((code or 0, tiling.read_prob_tensor(path)))
    if not groups:
        raise ValueError(f"no tile_*.bin files found in {directory}")

    tiles = []
    for (r, c), entries in sorted(groups.items()):
        if use_tta:
            variant_probs = []
            for code, prob in sorted(entries):
                variant = tiling.DihedralVariant(rotation=(code % 4) * 90,
                                                 h_flip=code >= 4)
                variant_probs.append((variant, prob.astype(np.float64)))
            tiles.append(((r, c), tiling.tta_fuse(variant_probs)))
        else:
            if len(entries) != 1:
                raise ValueError(f"duplicate tile files for offset {(r, c)}")
            tiles.append(((r, c), entries[0][1].astype(np.float64)))
    return tiles


def _fuse_one_scale(directory: Path, height: int, width: int, window: int,
                    overlap: float, use_tta: bool) -> np.ndarray:
    plan = tiling.plan_tiles(height, width, window, overlap)
    return tiling.fuse_probabilities(_collect_tiles(directory, use_tta), plan)


def cmd_fuse(args) -> int:
    root = Path(args.tiles)
    scales = [float(s) for s in _csv_list(args.scales)] if args.scales else None
    if scales:
        per_scale = []
        for s in scales:
            sub = root / f"scale_{s:g}"
            if not sub.is_dir():
                raise FileNotFoundError(f"missing scale directory {sub}")
            sh, sw = round(args.height * s), round(args.width * s)
            per_scale.append((s, _fuse_one_scale(sub, sh, sw, args.window,
                                                 args.overlap, args.tta)))
        fused = tiling.fuse_multiscale(per_scale, args.height, args.width)
    else:
        fused = _fuse_one_scale(root, args.height, args.width, args.window,
                                args.overlap, args.tta)

    tiling.write_prob_tensor(args.out_prob, fused)
    dataset_io.write_mask(tiling.argmax_mask(fused), args.out_mask)
    print(json.dumps({
        "out_prob": args.out_prob,
        "out_mask": args.out_mask,
        "channels": int(fused.shape[0]),
        "height": int(fused.shape[1]),
        "width": int(fused.shape[2]),
    }, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histomix",
        description="Deterministic image-mixing synthesis and segmentation "
                    "evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize an annotated dataset")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--manifest", help="source dataset manifest (JSONL)")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--strategy", choices=["mosaic", "bezier"])
    p.add_argument("--count", type=int, help="kept samples to produce")
    p.add_argument("--seed", type=int)
    p.add_argument("--filter", choices=["none", "external", "heuristic"])
    p.add_argument("--scores", help="CSV of sample_id,p_real for --filter external")
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--m", type=int, help="grid order of the spliced tiles")
    p.add_argument("--anchors", type=int, help="Bezier loop anchor count")
    p.add_argument("--bezier-classes", dest="bezier_classes",
                   help="comma list of class names eligible for Bezier mixing")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--classes", required=True,
                   help='JSON file {"class_names": [...], "background_index": N}')
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("permtest", help="two-tailed permutation test on two samples")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--max-exact", type=int, default=20_000)
    p.add_argument("--mc-iters", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("losscheck", help="finite-difference check of loss gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("fuse", help="fuse per-tile probability tensors")
    p.add_argument("--tiles", required=True,
                   help="directory of tile_R_C[.vK].bin tensors (see README)")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--window", type=int, default=224)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--tta", action="store_true",
                   help="inverse-align and average dihedral variant files per tile")
    p.add_argument("--scales", help="comma list; tiles live in scale_<s>/ subdirs")
    p.add_argument("--out-prob", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(func=cmd_fuse)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
