import json

import numpy as np
import pytest

from histomix import dataset_io as dio
from histomix.synthesis import SynthesisRecipe
from conftest import random_image


def manifest_with(labels_per_entry, class_names=("A", "B", "C")):
    m = dio.DatasetManifest(list(class_names))
    for i, labels in enumerate(labels_per_entry):
        m.entries.append(dio.ManifestEntry(
            id=f"e{i}", image=f"e{i}.png", labels=list(labels)))
    return m


class TestManifest:
    def test_roundtrip_identity(self, tmp_path):
        m = manifest_with([(1, 0, 0), (0, 1, 0), (1, 1, 0)])
        m.entries[1].mask = "e1_mask.png"
        path = tmp_path / "manifest.jsonl"
        dio.write_manifest(m, path)
        back = dio.read_manifest(path)
        assert back.class_names == m.class_names
        assert back.background_index == m.background_index
        assert back.entries == m.entries
        # second write is byte-identical
        path2 = tmp_path / "again.jsonl"
        dio.write_manifest(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        lines = [json.dumps({"class_names": ["A"], "background_index": 255}),
                 json.dumps({"id": "x", "image": "x.png", "labels": [1]}),
                 json.dumps({"id": "x", "image": "y.png", "labels": [1]})]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="duplicate"):
            dio.read_manifest(path)

    def test_label_length_enforced(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        lines = [json.dumps({"class_names": ["A", "B"]}),
                 json.dumps({"id": "x", "image": "x.png", "labels": [1]})]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="labels"):
            dio.read_manifest(path)


class TestSingleLabelIndex:
    def test_multilabel_entries_excluded(self):
        pools = dio.index_single_label(manifest_with([(1, 0, 0), (0, 1, 0), (1, 1, 0)]))
        assert pools == {0: ["e0"], 1: ["e1"], 2: []}

    def test_luad_shaped_pool_sizes(self):
        sizes = {"TE": 1574, "NEC": 787, "LYM": 42, "TAS": 2192}
        labels = []
        for c, n in enumerate(sizes.values()):
            one_hot = [1 if k == c else 0 for k in range(4)]
            labels.extend([one_hot] * n)
        labels.append([1, 1, 0, 0])  # one multi-label straggler
        pools = dio.index_single_label(manifest_with(labels, class_names=list(sizes)))
        assert [len(pools[c]) for c in range(4)] == list(sizes.values())

    def test_empty_manifest_warns(self, caplog):
        with caplog.at_level("WARNING"):
            pools = dio.index_single_label(manifest_with([]))
        assert all(not ids for ids in pools.values())
        assert len(caplog.records) == 3

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            dio.index_single_label(manifest_with([(2, 0, 0)]))


class TestPixelIO:
    def test_image_roundtrip(self, rng, tmp_path):
        img = random_image(rng, 19, 23)
        dio.write_image(img, tmp_path / "x.png")
        assert np.array_equal(dio.read_image(tmp_path / "x.png"), img)

    def test_one_by_one_roundtrip(self, tmp_path):
        img = np.array([[[1, 2, 3]]], dtype=np.uint8)
        mask = np.array([[255]], dtype=np.uint8)
        dio.write_image(img, tmp_path / "i.png")
        dio.write_mask(mask, tmp_path / "m.png")
        assert np.array_equal(dio.read_image(tmp_path / "i.png"), img)
        assert np.array_equal(dio.read_mask(tmp_path / "m.png"), mask)

    def test_mask_indices_stored_verbatim(self, rng, tmp_path):
        mask = rng.integers(0, 4, size=(15, 15)).astype(np.uint8)
        mask[0, :5] = 255
        dio.write_mask(mask, tmp_path / "m.png")
        assert np.array_equal(dio.read_mask(tmp_path / "m.png", 4, 255), mask)

    def test_out_of_range_index_named(self, tmp_path):
        mask = np.full((4, 4), 9, dtype=np.uint8)
        dio.write_mask(mask, tmp_path / "m.png")
        with pytest.raises(ValueError, match="9"):
            dio.read_mask(tmp_path / "m.png", num_classes=4)

    def test_palette_export_writes(self, rng, tmp_path):
        mask = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        dio.write_palette_mask(mask, tmp_path / "vis.png")
        assert (tmp_path / "vis.png").exists()


class TestWriteSample:
    def recipe(self):
        return SynthesisRecipe("mosaic", ["a", "b", "c", "d"], 99, anchor=(50, 60))

    def test_roundtrip_bits_and_labels(self, rng, tmp_path):
        img = random_image(rng, 32, 32)
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[16:] = 2
        sid = dio.write_sample(img, mask, self.recipe(), tmp_path, ["A", "B", "C"])
        assert np.array_equal(dio.read_image(tmp_path / f"{sid}.png"), img)
        assert np.array_equal(dio.read_mask(tmp_path / f"{sid}_mask.png"), mask)
        manifest = dio.read_manifest(tmp_path / "manifest.jsonl")
        assert manifest.entries[0].labels == [1, 0, 1]
        got = dio.read_recipe(tmp_path / f"{sid}.recipe.json")
        assert got == self.recipe()

    def test_id_collision_rejected(self, rng, tmp_path):
        img = random_image(rng, 8, 8)
        mask = np.zeros((8, 8), dtype=np.uint8)
        dio.write_sample(img, mask, self.recipe(), tmp_path, ["A"], sample_id="dup")
        with pytest.raises(FileExistsError):
            dio.write_sample(img, mask, self.recipe(), tmp_path, ["A"], sample_id="dup")

    def test_misaligned_rejected(self, rng, tmp_path):
        with pytest.raises(ValueError):
            dio.write_sample(random_image(rng, 8, 8), np.zeros((9, 8), np.uint8),
                             self.recipe(), tmp_path, ["A"])
