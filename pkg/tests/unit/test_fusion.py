"""
Tests for map normalization, block fusion and pseudo-mask synthesis.
"""

import numpy as np
import pytest

from src.core.fusion import (ClassLocalization, FusionError, extract_background, extract_foreground, fuse_maps,
                             localize_image, mask_from_maps, normalize_map, select_source_map, synthesize_mask)
from src.core.mdc_classifier import build_mdc
from src.core.models import LocalizationMap
from src.utils.validators import IGNORE


def nmap(values, class_id=1):
    return LocalizationMap(class_id=class_id, values=np.asarray(values, dtype=np.float64), normalized=True)


class TestNormalize:
    def test_clamps_and_scales(self):
        out = normalize_map(LocalizationMap(class_id=1, values=np.array([-1.0, 2.0, 4.0])))
        np.testing.assert_allclose(out.values, [0.0, 0.5, 1.0])
        assert out.normalized

    def test_idempotent(self, rng):
        once = normalize_map(LocalizationMap(class_id=2, values=rng.standard_normal((5, 5))))
        twice = normalize_map(once)
        np.testing.assert_allclose(twice.values, once.values)

    def test_non_positive_map_becomes_zeros(self):
        out = normalize_map(LocalizationMap(class_id=1, values=-np.ones((3, 3))))
        assert not np.any(out.values)


class TestFuse:
    def test_hand_example(self):
        fused = fuse_maps(nmap([0.2, 1.0]), [nmap([1.0, 0.0]), nmap([0.0, 0.4])])
        np.testing.assert_allclose(fused.values, [0.7, 1.2])
        assert not fused.normalized

    def test_single_dilated_copy_doubles(self, rng):
        h0 = nmap(rng.uniform(0, 1, (4, 4)))
        np.testing.assert_allclose(fuse_maps(h0, [h0]).values, 2 * h0.values)

    def test_zero_dilated_maps_leave_h0(self, rng):
        h0 = nmap(rng.uniform(0, 1, (4, 4)))
        zeros = [nmap(np.zeros((4, 4))) for _ in range(3)]
        np.testing.assert_allclose(fuse_maps(h0, zeros).values, h0.values)

    def test_mean_all_mode(self):
        fused = fuse_maps(nmap([0.2, 1.0]), [nmap([1.0, 0.0]), nmap([0.0, 0.4])], mode="mean_all")
        np.testing.assert_allclose(fused.values, [0.4, 1.4 / 3])

    def test_random_sets_stay_in_range(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 5))
            h0 = nmap(rng.uniform(0, 1, (6, 6)))
            hi = [nmap(rng.uniform(0, 1, (6, 6))) for _ in range(n)]
            fused = fuse_maps(h0, hi).values
            assert fused.min() >= 0.0
            assert fused.max() <= 2.0
            np.testing.assert_allclose(fused, h0.values + np.mean([m.values for m in hi], axis=0))

    def test_dilated_order_does_not_matter(self, rng):
        h0 = nmap(rng.uniform(0, 1, (5, 5)))
        hi = [nmap(rng.uniform(0, 1, (5, 5))) for _ in range(4)]
        forward = fuse_maps(h0, hi).values
        for perm in (rng.permutation(4) for _ in range(5)):
            np.testing.assert_allclose(fuse_maps(h0, [hi[i] for i in perm]).values, forward, rtol=1e-12)

    def test_errors(self):
        h0 = nmap([0.5, 1.0])
        with pytest.raises(FusionError):
            fuse_maps(h0, [])
        with pytest.raises(FusionError):
            fuse_maps(h0, [LocalizationMap(class_id=1, values=np.array([1.0, 0.0]))])
        with pytest.raises(FusionError):
            fuse_maps(h0, [nmap([1.0, 0.0], class_id=2)])
        with pytest.raises(FusionError):
            fuse_maps(h0, [nmap([1.0, 0.0, 0.0])])
        with pytest.raises(FusionError):
            fuse_maps(h0, [h0], mode="max")


class TestForeground:
    def test_threshold_relative_to_peak(self):
        fg = extract_foreground(np.array([0.7, 1.2]), fg_fraction=0.30)
        np.testing.assert_array_equal(fg, [False, True])

    def test_top_values_selected(self):
        fg = extract_foreground(np.array([0.1, 0.5, 0.95, 1.0]), fg_fraction=0.30)
        np.testing.assert_array_equal(fg, [False, False, True, True])

    @pytest.mark.parametrize("scale", [0.01, 1.0, 7.5])
    def test_scale_invariant(self, scale, rng):
        values = rng.uniform(0, 1, (8, 8))
        np.testing.assert_array_equal(extract_foreground(values * scale), extract_foreground(values))

    def test_fraction_rule(self):
        fg = extract_foreground(np.array([0.1, 0.5, 0.95, 1.0]), fg_fraction=0.30, rule="fraction")
        np.testing.assert_array_equal(fg, [False, True, True, True])

    def test_empty_map_selects_nothing(self):
        assert not extract_foreground(np.zeros((3, 3))).any()

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2])
    def test_fraction_out_of_range(self, fraction):
        with pytest.raises(ValueError):
            extract_foreground(np.ones(3), fg_fraction=fraction)

    def test_unknown_rule(self):
        with pytest.raises(FusionError):
            extract_foreground(np.ones(3), rule="otsu")


class TestBackground:
    def test_strictly_below_threshold(self):
        bg = extract_background(np.array([0.02, 0.06, 0.3]), bg_threshold=0.06)
        np.testing.assert_array_equal(bg, [True, False, False])

    def test_out_of_range_saliency_rejected(self):
        with pytest.raises(ValueError):
            extract_background(np.array([0.5, 1.2]))


class TestSynthesize:
    def test_two_by_two_toy(self):
        fg = {
            1: np.array([[True, True], [False, False]]),
            2: np.array([[False, True], [False, True]]),
        }
        bg = np.array([[False, False], [True, True]])
        mask = synthesize_mask(fg, bg, {1, 2})
        np.testing.assert_array_equal(mask.labels, [[1, IGNORE], [0, IGNORE]])

    def test_unclaimed_pixel_is_ignored(self):
        mask = synthesize_mask({1: np.array([False])}, np.array([False]), {1})
        assert mask.labels[0] == IGNORE
        assert mask.ignored_fraction() == 1.0

    def test_only_background_when_no_classes(self):
        mask = synthesize_mask({}, np.array([True, False]), set())
        np.testing.assert_array_equal(mask.labels, [0, IGNORE])

    def test_foreign_class_rejected(self):
        with pytest.raises(FusionError):
            synthesize_mask({3: np.array([True])}, np.array([False]), {1})

    def test_shape_mismatch_rejected(self):
        with pytest.raises(FusionError):
            synthesize_mask({1: np.array([True, False])}, np.array([False]), {1})


class TestMapSources:
    @pytest.fixture
    def localization(self):
        blocks = [nmap([[1.0, 0.0]]), nmap([[0.0, 1.0]]), nmap([[0.5, 0.5]])]
        fused = fuse_maps(blocks[0], blocks[1:])
        return ClassLocalization(class_id=1, block_maps=blocks, fused=fused)

    def test_select_sources(self, localization):
        assert select_source_map(localization, "fused") is localization.fused
        assert select_source_map(localization, "block:1") is localization.block_maps[1]
        np.testing.assert_allclose(select_source_map(localization, "mean_all").values, [[0.5, 0.5]])

    @pytest.mark.parametrize("source", ["block:7", "block:x", "max"])
    def test_bad_sources(self, localization, source):
        with pytest.raises(FusionError):
            select_source_map(localization, source)

    def test_mask_from_maps(self, localization):
        # fused is [1.25, 0.75]: only the left pixel clears the 0.875 threshold
        mask = mask_from_maps({1: localization}, np.array([[0.5, 0.01]]), {1})
        np.testing.assert_array_equal(mask.labels, [[1, 0]])
        mask = mask_from_maps({1: localization}, np.array([[0.5, 0.01]]), {1}, source="block:1")
        np.testing.assert_array_equal(mask.labels, [[IGNORE, IGNORE]])


class TestLocalizeImage:
    def test_per_class_maps(self, tiny_mdc_spec, rng):
        model = build_mdc(tiny_mdc_spec, seed=0)
        result = localize_image(model, rng.uniform(0, 1, (3, 16, 16)), {1, 3})
        assert sorted(result) == [1, 3]
        for class_id, loc in result.items():
            assert len(loc.block_maps) == 3
            for block in loc.block_maps:
                assert block.normalized
                assert block.values.shape == (16, 16)
                assert block.values.min() >= 0.0
                assert block.values.max() <= 1.0 + 1e-6
            expected = loc.block_maps[0].values + np.mean([m.values for m in loc.block_maps[1:]], axis=0)
            np.testing.assert_allclose(loc.fused.values, expected, rtol=1e-6)
