import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histomix import tiling
from conftest import random_image
from oracles import fused_by_padded_stack


def normalized(rng, c, h, w):
    p = rng.uniform(0.05, 1.0, size=(c, h, w))
    return p / p.sum(axis=0, keepdims=True)


class TestPlanTiles:
    def test_single_window(self):
        for overlap in (0.0, 0.5, 0.9):
            plan = tiling.plan_tiles(224, 224, 224, overlap)
            assert plan.windows == ((0, 0),)

    def test_448_no_overlap(self):
        plan = tiling.plan_tiles(448, 448, 224, 0.0)
        assert set(plan.windows) == {(r, c) for r in (0, 224) for c in (0, 224)}

    def test_336_half_overlap_snaps_exactly(self):
        plan = tiling.plan_tiles(336, 336, 224, 0.5)
        assert set(plan.windows) == {(r, c) for r in (0, 112) for c in (0, 112)}

    def test_edge_snap_when_stride_misses(self):
        plan = tiling.plan_tiles(500, 300, 224, 0.0)
        rows = sorted({r for r, _ in plan.windows})
        cols = sorted({c for _, c in plan.windows})
        assert rows == [0, 224, 276] and cols == [0, 76]

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            tiling.plan_tiles(200, 300, 224, 0.0)

    @given(st.integers(16, 400), st.integers(16, 400), st.integers(8, 64),
           st.floats(0, 0.9))
    @settings(max_examples=100)
    def test_coverage_and_bounds(self, h, w, window, overlap):
        if window > min(h, w):
            window = min(h, w)
        plan = tiling.plan_tiles(h, w, window, overlap)
        covered = np.zeros((h, w), dtype=bool)
        for r, c in plan.windows:
            assert 0 <= r <= h - window and 0 <= c <= w - window
            covered[r:r + window, c:c + window] = True
        assert covered.all()


class TestFusion:
    def test_single_tile_passthrough(self, rng):
        plan = tiling.plan_tiles(32, 32, 32, 0.0)
        prob = normalized(rng, 3, 32, 32)
        fused = tiling.fuse_probabilities([((0, 0), prob)], plan)
        assert np.allclose(fused, prob, atol=1e-12)

    def test_two_full_overlap_tiles_average(self, rng):
        plan = tiling.plan_tiles(16, 16, 16, 0.5)
        a, b = normalized(rng, 2, 16, 16), normalized(rng, 2, 16, 16)
        fused = tiling.fuse_probabilities([((0, 0), a), ((0, 0), b)], plan)
        assert np.allclose(fused, (a + b) / 2, atol=1e-12)

    def test_half_overlap_matches_contribution_oracle(self, rng):
        plan = tiling.plan_tiles(336, 336, 224, 0.5)
        tiles = [(off, normalized(rng, 3, 224, 224)) for off in plan.windows]
        fused = tiling.fuse_probabilities(tiles, plan)
        assert np.array_equal(fused, fused_by_padded_stack(tiles, plan))
        assert np.abs(fused.sum(axis=0) - 1.0).max() < 1e-6

    def test_missing_tile_uncovers_pixels(self, rng):
        plan = tiling.plan_tiles(448, 448, 224, 0.0)
        tiles = [(off, normalized(rng, 2, 224, 224)) for off in plan.windows[:-1]]
        with pytest.raises(ValueError, match="not covered"):
            tiling.fuse_probabilities(tiles, plan)

    def test_unplanned_offset_rejected(self, rng):
        plan = tiling.plan_tiles(224, 224, 224, 0.0)
        with pytest.raises(ValueError, match="not in the plan"):
            tiling.fuse_probabilities([((1, 0), normalized(rng, 2, 224, 224))], plan)

    def test_order_invariant(self, rng):
        plan = tiling.plan_tiles(336, 336, 224, 0.5)
        tiles = [(off, normalized(rng, 2, 224, 224)) for off in plan.windows]
        a = tiling.fuse_probabilities(tiles, plan)
        b = tiling.fuse_probabilities(list(reversed(tiles)), plan)
        assert np.allclose(a, b, atol=1e-12)


class TestTTA:
    def test_identity_variant_is_input(self, rng):
        img = random_image(rng, 12, 12)
        variants = dict((v.code, out) for v, out in tiling.tta_expand(img))
        assert np.array_equal(variants[0], img)

    def test_eight_distinct_variants_on_generic_image(self, rng):
        img = random_image(rng, 16, 16)
        outs = [out for _, out in tiling.tta_expand(img)]
        assert len(outs) == 8
        for i in range(8):
            for j in range(i + 1, 8):
                assert not np.array_equal(outs[i], outs[j])

    def test_variant_then_inverse_is_identity(self, rng):
        img = random_image(rng, 10, 14)
        for v, out in tiling.tta_expand(img):
            assert np.array_equal(tiling.invert_variant(out, v), img)

    def test_chw_round_trip(self, rng):
        prob = normalized(rng, 3, 6, 9)
        for v in tiling.ALL_VARIANTS:
            fwd = tiling.apply_variant(prob, v, axes=(1, 2))
            assert np.array_equal(tiling.invert_variant(fwd, v, axes=(1, 2)), prob)

    def test_fusing_identical_aligned_maps_returns_them(self, rng):
        prob = normalized(rng, 3, 8, 8)
        pairs = [(v, tiling.apply_variant(prob, v, axes=(1, 2)))
                 for v in tiling.ALL_VARIANTS]
        fused = tiling.tta_fuse(pairs)
        assert np.allclose(fused, prob, atol=1e-12)

    def test_constant_model_round_trip(self, rng):
        # a model returning the same spatially-constant map for any input:
        # expanding then fusing must give back exactly that constant
        image = random_image(rng, 8, 8)
        dist = np.array([0.15, 0.6, 0.25]).reshape(3, 1, 1)

        def model(_):
            return np.broadcast_to(dist, (3, 8, 8)).copy()

        preds = [(v, model(img_v)) for v, img_v in tiling.tta_expand(image)]
        fused = tiling.tta_fuse(preds)
        assert np.allclose(fused, model(image), atol=1e-15)

    def test_identity_fusion_idempotent(self, rng):
        prob = normalized(rng, 2, 6, 6)
        identity = tiling.DihedralVariant()
        once = tiling.tta_fuse([(identity, prob)])
        twice = tiling.tta_fuse([(identity, once)])
        assert np.array_equal(once, prob) and np.array_equal(twice, prob)

    def test_variant_order_invariant(self, rng):
        prob = normalized(rng, 3, 8, 8)
        pairs = [(v, tiling.apply_variant(prob, v, axes=(1, 2)))
                 for v in tiling.ALL_VARIANTS]
        a = tiling.tta_fuse(pairs)
        b = tiling.tta_fuse(list(reversed(pairs)))
        assert np.allclose(a, b, atol=1e-12)

    def test_symmetric_input_argmax_invariant(self):
        # build a D4-symmetric probability map from the distance to center
        n = 9
        yy, xx = np.mgrid[0:n, 0:n]
        r = np.hypot(yy - n // 2, xx - n // 2)
        chans = np.stack([np.exp(-r), np.exp(-np.abs(r - 2)), np.exp(-np.abs(r - 4))])
        prob = chans / chans.sum(axis=0, keepdims=True)
        pairs = [(v, tiling.apply_variant(prob, v, axes=(1, 2)))
                 for v in tiling.ALL_VARIANTS]
        mask = tiling.argmax_mask(tiling.tta_fuse(pairs))
        for v in tiling.ALL_VARIANTS:
            assert np.array_equal(tiling.apply_variant(mask, v), mask)

    def test_duplicate_variant_rejected(self, rng):
        prob = normalized(rng, 2, 4, 4)
        v = tiling.ALL_VARIANTS[0]
        with pytest.raises(ValueError, match="duplicate"):
            tiling.tta_fuse([(v, prob), (v, prob)])


class TestArgmax:
    def test_one_hot_recovers_classes(self, rng):
        mask = rng.integers(0, 4, size=(6, 6)).astype(np.uint8)
        prob = np.zeros((4, 6, 6))
        for c in range(4):
            prob[c] = mask == c
        assert np.array_equal(tiling.argmax_mask(prob), mask)

    def test_uniform_ties_break_to_zero(self):
        prob = np.full((3, 4, 4), 1 / 3)
        assert (tiling.argmax_mask(prob) == 0).all()

    def test_matches_naive_scan(self, rng):
        prob = rng.random((5, 7, 7))
        mask = tiling.argmax_mask(prob)
        for r in range(7):
            for c in range(7):
                best = 0
                for ch in range(5):
                    if prob[ch, r, c] > prob[best, r, c]:
                        best = ch
                assert mask[r, c] == best


class TestMultiscaleAndIO:
    def test_constant_map_survives_multiscale(self):
        dist = np.array([0.3, 0.6, 0.1]).reshape(3, 1, 1)
        maps = [(s, np.broadcast_to(dist, (3, int(20 * s), int(20 * s))).copy())
                for s in tiling.DEFAULT_SCALES]
        fused = tiling.fuse_multiscale(maps, 20, 20)
        assert np.allclose(fused, np.broadcast_to(dist, (3, 20, 20)), atol=1e-12)

    def test_tensor_roundtrip(self, rng, tmp_path):
        prob = normalized(rng, 4, 13, 17).astype(np.float32)
        path = tmp_path / "t.bin"
        tiling.write_prob_tensor(path, prob)
        assert np.array_equal(tiling.read_prob_tensor(path), prob)

    def test_truncated_tensor_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x01\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00\x00\x00")
        with pytest.raises(ValueError):
            tiling.read_prob_tensor(path)
