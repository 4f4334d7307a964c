"""Tests for the dataset container: image files, manifests, generation, loading."""

import hashlib
import json
import os
import struct
from datetime import timedelta

import numpy as np
import pytest

from sedift import data as D
from sedift.core import CATEGORIES, Image, PipelineConfig
from sedift.errors import ContractViolation, DataError
from sedift.weather import NormalizationStats, build_global_vector, parse_hour


@pytest.fixture(scope="module")
def ds_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "tree"
    cfg = PipelineConfig.make("desk", seed=11)
    descriptor = D.generate_dataset(str(root), cfg, n_scenes=20)
    return str(root), cfg, descriptor


class TestImageFile:
    def test_round_trip_quantizes_to_float32(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(5, 7, 1))
        path = tmp_path / "a.sdft"
        D.write_image(path, Image(arr))
        back = D.read_image(path)
        assert back.data.shape == (5, 7, 1)
        assert np.array_equal(back.data, arr.astype("<f4").astype(np.float64))

    def test_float32_data_round_trips_bit_exact(self, tmp_path):
        arr = np.random.default_rng(1).normal(size=(4, 6, 3)).astype("<f4").astype(np.float64)
        path = tmp_path / "b.sdft"
        D.write_image(path, Image(arr))
        assert np.array_equal(D.read_image(path).data, arr)

    def test_file_layout(self, tmp_path):
        arr = np.zeros((2, 3, 1))
        path = tmp_path / "c.sdft"
        D.write_image(path, Image(arr))
        raw = path.read_bytes()
        assert raw[:4] == b"SDFT"
        assert struct.unpack("<III", raw[4:16]) == (2, 3, 1)
        assert len(raw) == 16 + 2 * 3 * 1 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "d.sdft"
        path.write_bytes(b"JUNK" + b"\x00" * 20)
        with pytest.raises(DataError, match="magic"):
            D.read_image(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "e.sdft"
        D.write_image(path, Image(np.zeros((4, 4, 1))))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataError, match="bytes"):
            D.read_image(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "f.sdft"
        D.write_image(path, Image(np.zeros((4, 4, 1))))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DataError, match="bytes"):
            D.read_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            D.read_image(tmp_path / "nope.sdft")


class TestManifestEntry:
    def test_json_round_trip(self):
        entry = D.ManifestEntry(scene_id="scene-0003", category="nature",
                                timestamp="2021-04-05T14:00:00Z",
                                rgb_file="images/scene-0003.rgb.sdft",
                                thermal_file="images/scene-0003.th.sdft")
        assert D.ManifestEntry.from_json(entry.to_json()) == entry

    def test_json_keys_sorted(self):
        entry = D.ManifestEntry("s", "objects", "t", "r", "th")
        rec = json.loads(entry.to_json())
        assert list(rec) == sorted(rec)


class TestSceneSeed:
    def test_matches_seed_sequence(self):
        want = int(np.random.SeedSequence([5, 3]).generate_state(1)[0])
        assert D._scene_seed(5, 3) == want

    def test_deterministic_and_index_sensitive(self):
        seeds = [D._scene_seed(7, i) for i in range(50)]
        assert seeds == [D._scene_seed(7, i) for i in range(50)]
        assert len(set(seeds)) == 50

    def test_master_seed_sensitive(self):
        assert D._scene_seed(1, 0) != D._scene_seed(2, 0)


class TestContentHash:
    def _tree(self, tmp_path):
        (tmp_path / "a.txt").write_bytes(b"alpha")
        (tmp_path / "b.txt").write_bytes(b"beta")
        return tmp_path

    def test_matches_manual_digest(self, tmp_path):
        root = self._tree(tmp_path)
        digest = hashlib.sha256()
        for rel, payload in (("a.txt", b"alpha"), ("b.txt", b"beta")):
            digest.update(rel.encode() + b"\x00" + payload + b"\x00")
        assert D.content_hash(str(root), ["a.txt", "b.txt"]) == digest.hexdigest()

    def test_path_order_is_canonical(self, tmp_path):
        root = self._tree(tmp_path)
        assert (D.content_hash(str(root), ["b.txt", "a.txt"])
                == D.content_hash(str(root), ["a.txt", "b.txt"]))

    def test_sensitive_to_content_and_name(self, tmp_path):
        root = self._tree(tmp_path)
        base = D.content_hash(str(root), ["a.txt", "b.txt"])
        (root / "a.txt").write_bytes(b"alphb")
        assert D.content_hash(str(root), ["a.txt", "b.txt"]) != base


class TestGenerateDataset:
    def test_descriptor_fields(self, ds_root):
        root, cfg, desc = ds_root
        assert desc["format"] == D.DATASET_FORMAT
        assert desc["profile"] == "desk"
        assert desc["seed"] == 11
        assert desc["scene_count"] == 20
        assert (desc["height"], desc["width"]) == (96, 128)
        assert desc["weather_source"] == "synthetic"
        assert desc["splits"] == {"train": 18, "val": 1, "test": 1}
        assert set(desc["generator"]) == set(
            D.SceneGenConfig().to_dict())
        assert set(desc["noise"]) == {"netd_kelvin", "blur_sigma"}
        lo, hi = desc["timestamp_range"]
        assert parse_hour(lo) <= parse_hour(hi)
        assert len(desc["content_sha256"]) == 64

    def test_tree_layout(self, ds_root):
        root, _, _ = ds_root
        names = sorted(os.listdir(root))
        assert names == ["dataset.json", "images", "test.jsonl",
                         "train.jsonl", "val.jsonl", "weather.csv"]
        images = sorted(os.listdir(os.path.join(root, "images")))
        assert len(images) == 40
        assert all(n.endswith(".sdft") for n in images)

    def test_content_hash_verifies(self, ds_root):
        root, _, desc = ds_root
        rel = ["weather.csv", "train.jsonl", "val.jsonl", "test.jsonl"]
        rel += [f"images/{n}" for n in os.listdir(os.path.join(root, "images"))]
        assert D.content_hash(root, rel) == desc["content_sha256"]

    def test_descriptor_file_matches_return_value(self, ds_root):
        root, _, desc = ds_root
        with open(os.path.join(root, "dataset.json")) as fh:
            assert json.load(fh) == desc

    def test_manifest_scene_ids_partition(self, ds_root):
        root, _, _ = ds_root
        ids = {}
        for split in D.SPLITS:
            with open(os.path.join(root, f"{split}.jsonl")) as fh:
                ids[split] = {D.ManifestEntry.from_json(l).scene_id
                              for l in fh if l.strip()}
        assert not (ids["train"] & ids["val"])
        assert not (ids["train"] & ids["test"])
        assert not (ids["val"] & ids["test"])
        assert len(ids["train"] | ids["val"] | ids["test"]) == 20

    def test_refuses_nonempty_dir_without_force(self, ds_root):
        root, cfg, _ = ds_root
        with pytest.raises(DataError, match="not empty"):
            D.generate_dataset(root, cfg, 20)

    def test_needs_twenty_scenes(self, tmp_path):
        cfg = PipelineConfig.make("desk", seed=0)
        with pytest.raises(ContractViolation):
            D.generate_dataset(str(tmp_path / "x"), cfg, 19)

    def test_regeneration_is_byte_identical(self, ds_root, tmp_path):
        root, cfg, desc = ds_root
        other = tmp_path / "again"
        desc2 = D.generate_dataset(str(other), cfg, 20)
        assert desc2 == desc
        for dirpath, _, files in os.walk(root):
            for name in files:
                src = os.path.join(dirpath, name)
                rel = os.path.relpath(src, root)
                assert (open(src, "rb").read()
                        == open(other / rel, "rb").read()), rel

    def test_force_overwrites_in_place(self, tmp_path):
        cfg = PipelineConfig.make("desk", seed=3)
        root = str(tmp_path / "ow")
        d1 = D.generate_dataset(root, cfg, 20)
        d2 = D.generate_dataset(root, cfg, 20, force=True)
        assert d1 == d2

    def test_worker_count_does_not_change_bytes(self, ds_root, tmp_path):
        root, cfg, desc = ds_root
        par = tmp_path / "par"
        desc2 = D.generate_dataset(str(par), cfg, 20, workers=2)
        assert desc2["content_sha256"] == desc["content_sha256"]

    def test_seed_changes_content(self, tmp_path):
        cfg = PipelineConfig.make("desk", seed=12)
        desc = D.generate_dataset(str(tmp_path / "s12"), cfg, 20)
        cfg2 = PipelineConfig.make("desk", seed=13)
        desc2 = D.generate_dataset(str(tmp_path / "s13"), cfg2, 20)
        assert desc["content_sha256"] != desc2["content_sha256"]


class TestLoadDataset:
    def test_bundle_mirrors_descriptor_and_splits(self, ds_root):
        root, _, desc = ds_root
        bundle = D.load_dataset(root)
        assert bundle.descriptor == desc
        assert [len(bundle.splits[s]) for s in D.SPLITS] == [18, 1, 1]
        assert len(bundle.records) == 366 * 24

    def test_load_pair(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        entry = bundle.splits["test"][0]
        pair = bundle.load_pair(entry)
        assert pair.scene_id == entry.scene_id
        assert pair.category == entry.category
        assert pair.shape == (96, 128)
        assert np.max(np.abs(pair.thermal.data)) <= 1.0
        assert np.max(np.abs(pair.rgb_gray.data)) <= 1.0

    def test_history_window(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        entry = bundle.splits["val"][0]
        hist = bundle.history(entry)
        assert hist.values.shape == (72,)
        assert hist.values[-1] == bundle.records[
            parse_hour(entry.timestamp) - timedelta(hours=1)]

    def test_train_stats_pool_train_histories(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        stats = bundle.train_stats()
        manual = NormalizationStats.from_histories(
            [bundle.history(e).values for e in bundle.splits["train"]])
        assert stats.mean == manual.mean
        assert stats.std == manual.std

    def test_missing_descriptor(self, tmp_path):
        with pytest.raises(DataError, match="descriptor"):
            D.load_dataset(str(tmp_path))

    def test_unsupported_format_version(self, ds_root, tmp_path):
        root, _, desc = ds_root
        import shutil
        clone = tmp_path / "clone"
        shutil.copytree(root, clone)
        doctored = dict(desc, format=99)
        (clone / "dataset.json").write_text(json.dumps(doctored))
        with pytest.raises(DataError, match="format"):
            D.load_dataset(str(clone))


class TestMakeSamples:
    def test_direction_selects_input_output(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        stats = bundle.train_stats()
        entry = bundle.splits["test"][0]
        pair = bundle.load_pair(entry)
        fwd = D.make_samples(bundle, "test", "rgb2th", False, stats)
        rev = D.make_samples(bundle, "test", "th2rgb", False, stats)
        assert np.array_equal(fwd[0].x, pair.rgb_gray.data)
        assert np.array_equal(fwd[0].y, pair.thermal.data)
        assert np.array_equal(rev[0].x, pair.thermal.data)
        assert np.array_equal(rev[0].y, pair.rgb_gray.data)
        assert fwd[0].scene_id == entry.scene_id
        assert fwd[0].category == entry.category

    def test_global_vector_modes(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        stats = bundle.train_stats()
        entry = bundle.splits["test"][0]
        zeroed = D.make_samples(bundle, "test", "rgb2th", True, stats)
        full = D.make_samples(bundle, "test", "rgb2th", False, stats)
        assert zeroed[0].g.shape == (72,)
        assert np.all(zeroed[0].g == 0.0)
        want = build_global_vector(bundle.history(entry), stats).values
        assert np.array_equal(full[0].g, want)
        assert np.any(full[0].g != 0.0)

    def test_split_sizes(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        stats = bundle.train_stats()
        assert len(D.make_samples(bundle, "train", "rgb2th", True, stats)) == 18

    def test_unknown_direction(self, ds_root):
        root, _, _ = ds_root
        bundle = D.load_dataset(root)
        with pytest.raises(ContractViolation):
            D.make_samples(bundle, "test", "sideways", True, bundle.train_stats())


class TestVariantFlags:
    def test_table(self):
        assert D.variant_flags("regular-l1") == (True, False)
        assert D.variant_flags("augmented-l1") == (False, False)
        assert D.variant_flags("regular-l1cgan") == (True, True)
        assert D.variant_flags("augmented-l1cgan") == (False, True)

    def test_unknown_variant(self):
        with pytest.raises(ContractViolation):
            D.variant_flags("super-l1")

    def test_constants(self):
        assert D.DIRECTIONS == ("rgb2th", "th2rgb")
        assert D.VARIANTS == ("regular-l1", "augmented-l1",
                              "regular-l1cgan", "augmented-l1cgan")
        assert D.SPLITS == ("train", "val", "test")
