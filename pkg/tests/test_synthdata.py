import numpy as np
import pytest

from cordseg import dataset_io
from cordseg.synthdata import (
    PlacementError,
    SynthSpec,
    case_seed,
    generate_case,
    generate_dataset,
    plan_cases,
)

from oracles import flood_fill_labels


class TestGenerateCase:
    def test_zero_cords(self):
        img, mask, count = generate_case(SynthSpec(n_cords=0, seed=1))
        assert count == 0
        assert not mask.any()
        assert img.shape == (64, 64)

    def test_deterministic(self):
        spec = SynthSpec(n_cords=3, seed=9)
        a_img, a_mask, _ = generate_case(spec)
        b_img, b_mask, _ = generate_case(spec)
        np.testing.assert_array_equal(a_img, b_img)
        np.testing.assert_array_equal(a_mask, b_mask)

    def test_count_matches_components_over_many_specs(self):
        # the 4 px separation rule makes the mask component count exact
        for i in range(100):
            spec = SynthSpec(
                n_cords=int(1 + i % 4),
                seed=case_seed(99, i),
            )
            _, mask, count = generate_case(spec)
            _, n = flood_fill_labels(mask, 8)
            assert n == count == spec.n_cords

    def test_mask_is_exact_render_support(self):
        # without noise or blur the image is two-valued and the bright set
        # is exactly the mask
        spec = SynthSpec(n_cords=2, noise_std=0.0, blur_radius=0, seed=4)
        img, mask, _ = generate_case(spec)
        np.testing.assert_array_equal(img == spec.fg_intensity, mask)
        assert (img[~mask] == spec.bg_intensity).all()

    def test_bimodal_histogram_with_low_noise(self):
        # thick enough cords keep their interior at the fg intensity
        # through the blur, so two modes separate cleanly
        spec = SynthSpec(
            width=96, height=96, n_cords=4, thickness=(5, 7), noise_std=8.0, seed=5
        )
        img, mask, _ = generate_case(spec)
        hist = np.bincount(img.ravel(), minlength=256)
        lo, hi = spec.bg_intensity, spec.fg_intensity
        near_bg = hist[lo - 20 : lo + 21].sum()
        near_fg = hist[hi - 20 : hi + 21].sum()
        between = hist[lo + 35 : hi - 35].sum()
        assert near_bg > between
        assert near_fg > between
        assert near_fg > 0

    def test_placement_error_when_canvas_too_small(self):
        with pytest.raises(PlacementError):
            generate_case(SynthSpec(width=12, height=12, n_cords=30, seed=0))

    def test_cords_separated_by_gap(self):
        _, mask, count = generate_case(SynthSpec(n_cords=4, seed=11))
        # eroding the complement by one still leaves every cord separate
        _, n = flood_fill_labels(mask, 8)
        assert n == count


class TestPlanCases:
    def test_split_sizes(self):
        plans = plan_cases(SynthSpec(), 120, 30, seed=7)
        assert len(plans) == 150
        assert sum(1 for _, split, _ in plans if split == "train") == 120

    def test_empty_train(self):
        plans = plan_cases(SynthSpec(), 0, 5, seed=7)
        assert all(split == "test" for _, split, _ in plans)
        assert len(plans) == 5

    def test_ids_disjoint_across_splits(self):
        plans = plan_cases(SynthSpec(), 10, 10, seed=7)
        ids = [cid for cid, _, _ in plans]
        assert len(set(ids)) == len(ids)

    def test_seeds_distinct(self):
        plans = plan_cases(SynthSpec(), 50, 10, seed=3)
        seeds = [spec.seed for _, _, spec in plans]
        assert len(set(seeds)) == len(seeds)

    def test_negative_sizes_rejected(self):
        with pytest.raises(ValueError):
            plan_cases(SynthSpec(), -1, 0, seed=0)


class TestGenerateDataset:
    def test_writes_cases_and_manifest(self, tmp_path):
        manifest = generate_dataset(
            SynthSpec(width=32, height=32, n_cords=1), 4, 2, seed=5, out_dir=tmp_path
        )
        assert len(manifest.cases) == 6
        assert len(manifest.split("train")) == 4
        loaded = dataset_io.load_manifest(tmp_path / "manifest.json")
        assert [c.id for c in loaded.cases] == [c.id for c in manifest.cases]
        for case in loaded.cases:
            img = dataset_io.load_pgm(loaded.image_path(case))
            mask = dataset_io.image_to_mask(dataset_io.load_pgm(loaded.mask_path(case)))
            assert img.shape == mask.shape == (32, 32)
            assert case.true_count == 1

    def test_labels_from_threshold(self, tmp_path):
        manifest = generate_dataset(
            SynthSpec(width=96, height=96, n_cords=2),
            0,
            4,
            seed=2,
            out_dir=tmp_path,
            label_threshold=1,
            cord_range=(1, 3),
        )
        for case in manifest.cases:
            expected = "positive" if case.true_count > 1 else "negative"
            assert case.label == expected

    def test_cord_range_varies_counts(self, tmp_path):
        manifest = generate_dataset(
            SynthSpec(width=96, height=96),
            0,
            12,
            seed=8,
            out_dir=tmp_path,
            cord_range=(1, 5),
        )
        counts = {c.true_count for c in manifest.cases}
        assert len(counts) > 1
        assert all(1 <= c <= 5 for c in counts)

    def test_regenerating_is_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_dataset(SynthSpec(n_cords=2), 2, 1, seed=4, out_dir=a_dir)
        generate_dataset(SynthSpec(n_cords=2), 2, 1, seed=4, out_dir=b_dir)
        for name in ("train_0000.pgm", "train_0001.mask.pgm", "manifest.json"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()
