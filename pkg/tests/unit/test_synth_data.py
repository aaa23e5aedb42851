"""
Tests for the synthetic shapes dataset and its saliency maps.
"""

from dataclasses import replace

import numpy as np
import pytest

from src.core.models import InvalidSpecError
from src.core.synth_data import (DatasetError, check_record, generate_dataset, render_record, shape_mask,
                                 synth_saliency)
from src.integrations.dataset_io import MANIFEST_NAME, load_manifest
from src.integrations.netpbm_io import read_pgm


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestRender:
    def test_same_index_same_pixels(self, tiny_gen_config):
        a_pixels, a_mask = render_record(tiny_gen_config, 5)
        b_pixels, b_mask = render_record(tiny_gen_config, 5)
        assert a_pixels.tobytes() == b_pixels.tobytes()
        assert a_mask.tobytes() == b_mask.tobytes()

    def test_seed_changes_output(self, tiny_gen_config):
        a, _ = render_record(tiny_gen_config, 0)
        b, _ = render_record(replace(tiny_gen_config, seed=4), 0)
        assert a.tobytes() != b.tobytes()

    def test_first_shape_class_cycles(self, tiny_gen_config):
        for index in range(6):
            _, mask = render_record(replace(tiny_gen_config, shapes_max=1), index)
            assert set(np.unique(mask)) == {0, index % 3 + 1}

    def test_shape_masks_are_non_empty(self):
        for name in ("disk", "square", "triangle", "ring", "cross", "diamond"):
            assert shape_mask(name, 32, (16.0, 16.0), 10.0).sum() > 10


class TestSaliency:
    def test_falloff_oracle(self):
        mask = np.array([[0, 0, 0, 1]])
        np.testing.assert_allclose(synth_saliency(mask, falloff=4.0).values, [[0.25, 0.5, 0.75, 1.0]])

    def test_foreground_is_fully_salient(self, tiny_gen_config):
        _, mask = render_record(tiny_gen_config, 2)
        values = synth_saliency(mask).values
        assert np.all(values[mask > 0] == 1.0)
        assert values.min() >= 0.0

    def test_noise_stays_in_range_and_is_seeded(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:5, 2:5] = 1
        a = synth_saliency(mask, noise_level=0.3, seed=1).values
        b = synth_saliency(mask, noise_level=0.3, seed=1).values
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_degenerate_masks(self):
        assert not synth_saliency(np.zeros((3, 3))).values.any()
        assert np.all(synth_saliency(np.ones((3, 3))).values == 1.0)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            synth_saliency(np.zeros((2, 2)), noise_level=1.5)
        with pytest.raises(ValueError):
            synth_saliency(np.zeros((2, 2)), falloff=0)


class TestGenerate:
    def test_layout_and_manifest(self, tiny_gen_config, tmp_path):
        records = generate_dataset(tiny_gen_config, tmp_path)
        assert [r.split for r in records] == ["weak"] * 12 + ["strong"] * 4 + ["val"] * 4
        assert load_manifest(tmp_path / MANIFEST_NAME) == records
        for record in records:
            assert (tmp_path / record.image_path).exists()
            assert (tmp_path / record.saliency_path).exists()
            mask = read_pgm(tmp_path / record.mask_path)
            assert record.labels == frozenset(int(c) for c in np.unique(mask) if c != 0)

    def test_saliency_covers_objects(self, tiny_gen_config, tmp_path):
        records = generate_dataset(tiny_gen_config, tmp_path)
        for record in records[:5]:
            mask = read_pgm(tmp_path / record.mask_path)
            saliency = read_pgm(tmp_path / record.saliency_path)
            assert np.all(saliency[mask > 0] == 255)

    def test_every_class_appears(self, tiny_gen_config, tmp_path):
        records = generate_dataset(tiny_gen_config, tmp_path)
        for class_id in range(1, 4):
            assert sum(class_id in r.labels for r in records) >= 2

    def test_bitwise_deterministic(self, tiny_gen_config, tmp_path):
        generate_dataset(tiny_gen_config, tmp_path / "a")
        generate_dataset(tiny_gen_config, tmp_path / "b")
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_worker_count_does_not_change_output(self, tiny_gen_config, tmp_path):
        generate_dataset(tiny_gen_config, tmp_path / "serial")
        generate_dataset(tiny_gen_config, tmp_path / "parallel", num_workers=2)
        assert tree_bytes(tmp_path / "serial") == tree_bytes(tmp_path / "parallel")

    @pytest.mark.parametrize("field,value", [("shapes_min", 0), ("num_classes", 7), ("scale_max", 1.0),
                                             ("image_size", 4)])
    def test_invalid_config_rejected(self, tiny_gen_config, tmp_path, field, value):
        with pytest.raises(InvalidSpecError):
            generate_dataset(replace(tiny_gen_config, **{field: value}), tmp_path)

    def test_unwritable_root(self, tiny_gen_config, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DatasetError):
            generate_dataset(tiny_gen_config, blocker / "data")

    def test_check_record_rejects_mismatch(self, tiny_gen_config, tmp_path):
        record = generate_dataset(replace(tiny_gen_config, weak_count=1, strong_count=0, val_count=0), tmp_path)[0]
        with pytest.raises(DatasetError):
            check_record(replace(record, labels=frozenset({1, 2, 3})), np.zeros((4, 4), dtype=np.uint8) + 1)
        with pytest.raises(DatasetError):
            check_record(replace(record, labels=frozenset()), np.zeros((4, 4), dtype=np.uint8))
