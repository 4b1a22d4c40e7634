import json

import numpy as np
import pytest

from histomix import dataset_io as dio
from histomix import tiling
from histomix.cli import main


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSynthCommand:
    def test_repeat_runs_byte_identical(self, toy_manifest, tmp_path, capsys):
        dirs = [tmp_path / "run1", tmp_path / "run2"]
        for d in dirs:
            code, out, _ = run(capsys, "synth", "--manifest", toy_manifest,
                               "--out", d, "--strategy", "bezier",
                               "--count", "6", "--seed", "7")
            assert code == 0
            assert json.loads(out)["kept"] == 6
        assert tree_bytes(dirs[0]) == tree_bytes(dirs[1])

    def test_external_scores_below_threshold_exit_nonzero(self, toy_manifest,
                                                          tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        scores.write_text(
            "".join(f"mosaic_{i:06d},0.4\n" for i in range(20)), encoding="utf-8")
        code, out, err = run(capsys, "synth", "--manifest", toy_manifest,
                             "--out", tmp_path / "o", "--strategy", "mosaic",
                             "--count", "2", "--seed", "1",
                             "--filter", "external", "--scores", scores)
        assert code == 2
        assert json.loads(out)["kept"] == 0

    def test_config_file_with_flag_override(self, toy_manifest, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"manifest = {toy_manifest}\n"
            f"out = {tmp_path / 'cfg_out'}\n"
            "strategy = mosaic\n"
            "count = 999  # overridden by the flag below\n"
            "seed = 3\n", encoding="utf-8")
        code, out, _ = run(capsys, "synth", "--config", cfg, "--count", "3")
        assert code == 0
        summary = json.loads(out)
        assert summary["kept"] == 3 and summary["strategy"] == "mosaic"

    def test_missing_manifest_flag_is_validation_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--out", tmp_path / "x")
        assert code == 1
        assert "manifest" in err

    def test_full_scale_batch_completes(self, toy_manifest, tmp_path, capsys):
        # a full experiment-scale batch (3600 per strategy) runs to completion
        out = tmp_path / "full"
        code, stdout, _ = run(capsys, "synth", "--manifest", toy_manifest,
                              "--out", out, "--strategy", "mosaic",
                              "--count", "3600", "--seed", "2", "--workers", "4")
        assert code == 0
        assert json.loads(stdout)["kept"] == 3600
        manifest = dio.read_manifest(out / "manifest.jsonl")
        assert len(manifest.entries) == 3600
        assert len(list(out.glob("mosaic_*.png"))) == 2 * 3600  # image + mask


class TestEvalCommand:
    def write_masks(self, d, arrays):
        d.mkdir(parents=True, exist_ok=True)
        for name, arr in arrays.items():
            dio.write_mask(np.asarray(arr, dtype=np.uint8), d / f"{name}.png")

    def classes_file(self, tmp_path, names=("A", "B")):
        path = tmp_path / "classes.json"
        path.write_text(json.dumps({"class_names": list(names),
                                    "background_index": 255}))
        return path

    def test_identical_dirs_score_one(self, rng, tmp_path, capsys):
        masks = {f"m{i}": rng.integers(0, 2, size=(8, 8)) for i in range(3)}
        self.write_masks(tmp_path / "gt", masks)
        self.write_masks(tmp_path / "pred", masks)
        code, out, _ = run(capsys, "eval", "--pred", tmp_path / "pred",
                           "--gt", tmp_path / "gt",
                           "--classes", self.classes_file(tmp_path))
        assert code == 0
        assert json.loads(out)["miou"] == 1.0

    def test_toy_fixture_reports_7_12(self, tmp_path, capsys):
        self.write_masks(tmp_path / "gt", {"t": [[0, 0], [1, 1]]})
        self.write_masks(tmp_path / "pred", {"t": [[0, 1], [1, 1]]})
        code, out, _ = run(capsys, "eval", "--pred", tmp_path / "pred",
                           "--gt", tmp_path / "gt",
                           "--classes", self.classes_file(tmp_path),
                           "--out", tmp_path / "report.json")
        assert code == 0
        report = json.loads(out)
        assert report["miou"] == pytest.approx(7 / 12, abs=1e-12)
        assert report["fwiou"] == pytest.approx(7 / 12, abs=1e-12)
        assert json.loads((tmp_path / "report.json").read_text()) == report

    def test_missing_prediction_names_file(self, tmp_path, capsys):
        self.write_masks(tmp_path / "gt", {"only_gt": [[0]]})
        (tmp_path / "pred").mkdir()
        code, _, err = run(capsys, "eval", "--pred", tmp_path / "pred",
                           "--gt", tmp_path / "gt",
                           "--classes", self.classes_file(tmp_path))
        assert code == 2
        assert "only_gt" in err


class TestPermtestCommand:
    def test_identical_files_p_one(self, tmp_path, capsys):
        for name in ("a.txt", "b.txt"):
            (tmp_path / name).write_text("1.0 2.0 3.0\n")
        code, out, _ = run(capsys, "permtest", tmp_path / "a.txt", tmp_path / "b.txt")
        assert code == 0
        assert json.loads(out)["p_value"] == 1.0

    def test_exhaustive_toy_case(self, tmp_path, capsys):
        (tmp_path / "a.txt").write_text("1\n1\n")
        (tmp_path / "b.txt").write_text("0\n0\n")
        code, out, _ = run(capsys, "permtest", tmp_path / "a.txt", tmp_path / "b.txt")
        assert json.loads(out)["p_value"] == pytest.approx(1 / 3, abs=1e-12)

    def test_monte_carlo_reproducible(self, rng, tmp_path, capsys):
        (tmp_path / "a.txt").write_text(" ".join(str(v) for v in rng.normal(size=8)))
        (tmp_path / "b.txt").write_text(" ".join(str(v) for v in rng.normal(size=8)))
        outs = []
        for _ in range(2):
            code, out, _ = run(capsys, "permtest", tmp_path / "a.txt",
                               tmp_path / "b.txt", "--max-exact", "1",
                               "--mc-iters", "3000", "--seed", "11")
            assert code == 0
            outs.append(json.loads(out)["p_value"])
        assert outs[0] == outs[1]


class TestLosscheckCommand:
    def test_passes_and_exits_zero(self, capsys):
        code, out, err = run(capsys, "losscheck", "--trials", "5")
        assert code == 0
        report = json.loads(out)
        assert all(row["passed"] for row in report.values())
        assert "pass" in err


class TestFuseCommand:
    def test_single_tile_reproduced(self, rng, tmp_path, capsys):
        prob = rng.uniform(0.1, 1.0, size=(3, 32, 32)).astype(np.float32)
        prob /= prob.sum(axis=0, keepdims=True)
        tiles = tmp_path / "tiles"
        tiles.mkdir()
        tiling.write_prob_tensor(tiles / "tile_0_0.bin", prob)
        code, out, _ = run(capsys, "fuse", "--tiles", tiles, "--height", "32",
                           "--width", "32", "--window", "32",
                           "--out-prob", tmp_path / "fused.bin",
                           "--out-mask", tmp_path / "mask.png")
        assert code == 0
        fused = tiling.read_prob_tensor(tmp_path / "fused.bin")
        assert np.allclose(fused, prob, atol=1e-6)
        mask = dio.read_mask(tmp_path / "mask.png")
        assert np.array_equal(mask, prob.argmax(axis=0).astype(np.uint8))

    def test_half_overlap_fixture_matches_library(self, rng, tmp_path, capsys):
        plan = tiling.plan_tiles(336, 336, 224, 0.5)
        tiles_dir = tmp_path / "tiles"
        tiles_dir.mkdir()
        tiles = []
        for r, c in plan.windows:
            prob = rng.uniform(0.1, 1.0, size=(2, 224, 224))
            prob /= prob.sum(axis=0, keepdims=True)
            prob32 = prob.astype(np.float32)
            prob32 /= prob32.sum(axis=0, keepdims=True)
            tiling.write_prob_tensor(tiles_dir / f"tile_{r}_{c}.bin", prob32)
            tiles.append(((r, c), tiling.read_prob_tensor(tiles_dir / f"tile_{r}_{c}.bin")))
        code, _, _ = run(capsys, "fuse", "--tiles", tiles_dir, "--height", "336",
                         "--width", "336", "--window", "224", "--overlap", "0.5",
                         "--out-prob", tmp_path / "fused.bin",
                         "--out-mask", tmp_path / "mask.png")
        assert code == 0
        expected = tiling.fuse_probabilities(
            [(off, p.astype(np.float64)) for off, p in tiles], plan)
        got = tiling.read_prob_tensor(tmp_path / "fused.bin")
        assert np.allclose(got, expected, atol=1e-6)

    def test_multiscale_constant_map(self, rng, tmp_path, capsys):
        dist = np.array([0.2, 0.5, 0.3], dtype=np.float32).reshape(3, 1, 1)
        tiles = tmp_path / "tiles"
        for s in (0.75, 1.0, 1.25):
            side = round(64 * s)
            sub = tiles / f"scale_{s:g}"
            sub.mkdir(parents=True)
            for r, c in tiling.plan_tiles(side, side, 48, 0.5).windows:
                tiling.write_prob_tensor(
                    sub / f"tile_{r}_{c}.bin", np.broadcast_to(dist, (3, 48, 48)).copy())
        code, _, _ = run(capsys, "fuse", "--tiles", tiles, "--height", "64",
                         "--width", "64", "--window", "48", "--overlap", "0.5",
                         "--scales", "0.75,1.0,1.25",
                         "--out-prob", tmp_path / "fused.bin",
                         "--out-mask", tmp_path / "mask.png")
        assert code == 0
        fused = tiling.read_prob_tensor(tmp_path / "fused.bin")
        assert np.allclose(fused, np.broadcast_to(dist, (3, 64, 64)), atol=1e-6)

    def test_tta_files_fused(self, rng, tmp_path, capsys):
        prob = rng.uniform(0.1, 1.0, size=(2, 16, 16))
        prob /= prob.sum(axis=0, keepdims=True)
        tiles = tmp_path / "tiles"
        tiles.mkdir()
        for v in tiling.ALL_VARIANTS:
            tiling.write_prob_tensor(tiles / f"tile_0_0_v{v.code}.bin",
                                     tiling.apply_variant(prob, v, axes=(1, 2)))
        code, _, _ = run(capsys, "fuse", "--tiles", tiles, "--height", "16",
                         "--width", "16", "--window", "16", "--tta",
                         "--out-prob", tmp_path / "fused.bin",
                         "--out-mask", tmp_path / "mask.png")
        assert code == 0
        fused = tiling.read_prob_tensor(tmp_path / "fused.bin")
        assert np.allclose(fused, prob, atol=1e-6)
