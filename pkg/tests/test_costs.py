"""Classical matching costs against brute-force oracles and hand cases."""

import numpy as np
import pytest

from stereo4p.costs import (
    CENSUS_DEFAULT_WINDOW,
    LARGE_COMPARE_WINDOW,
    SMALL_COMPARE_WINDOW,
    CostProfile,
    census_cost,
    census_volume,
    cost_profile,
    normalize_profile,
    pixelwise_cost,
    pixelwise_volume,
    sad_cost,
    sad_volume,
    windowed_cost,
)
from stereo4p.errors import ConfigError, ShapeError
from stereo4p.util import COST_SENTINEL

from oracles import (
    birchfield_tomasi_reference,
    census_reference,
    local_minima_count,
    sad_reference,
)


def random_pair(rng, h=13, w=17):
    left = rng.random((h, w))
    right = rng.random((h, w))
    return left, right


class TestSadCost:
    def test_identical_images_zero(self, rng):
        img = rng.random((9, 9))
        assert sad_cost(img, img, 5, 4, 4, 0) == 0.0

    def test_unit_difference(self):
        left = np.ones((7, 9))
        right = np.zeros((7, 9))
        assert sad_cost(left, right, 5, 3, 4, 0) == pytest.approx(1.0)

    def test_window_one_is_absolute_difference(self, rng):
        left, right = random_pair(rng)
        for _ in range(20):
            y = int(rng.integers(0, left.shape[0]))
            x = int(rng.integers(0, left.shape[1]))
            d = int(rng.integers(0, x + 1))
            expect = abs(left[y, x] - right[y, x - d])
            assert sad_cost(left, right, 1, y, x, d) == pytest.approx(expect, rel=1e-12)

    def test_matches_window_oracle(self, rng):
        left, right = random_pair(rng, 15, 21)
        for _ in range(60):
            y = int(rng.integers(0, 15))
            x = int(rng.integers(0, 21))
            d = int(rng.integers(0, x + 1))
            got = sad_cost(left, right, 11, y, x, d)
            want = sad_reference(left, right, 11, y, x, d)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_out_of_range_disparity_is_sentinel(self, rng):
        left, right = random_pair(rng)
        assert sad_cost(left, right, 5, 3, 2, 5) == COST_SENTINEL
        assert sad_cost(left, right, 5, 3, 2, -40) == COST_SENTINEL

    def test_even_window_rejected(self, rng):
        left, right = random_pair(rng)
        with pytest.raises(ConfigError):
            sad_cost(left, right, 4, 0, 0, 0)

    def test_pixel_outside_image_rejected(self, rng):
        left, right = random_pair(rng)
        with pytest.raises(ShapeError):
            sad_cost(left, right, 5, 99, 0, 0)

    def test_mismatched_shapes_rejected(self, rng):
        with pytest.raises(ShapeError):
            sad_cost(rng.random((5, 5)), rng.random((5, 6)), 3, 0, 0, 0)


class TestCensusCost:
    def test_identical_images_zero(self, rng):
        img = rng.random((11, 11))
        assert census_cost(img, img, 9, 5, 5, 0) == 0.0

    def test_offset_invariance(self, rng):
        left = rng.random((11, 13))
        right = left + 0.37
        for y, x in [(5, 6), (0, 0), (10, 12), (3, 9)]:
            assert census_cost(left, right, 9, y, x, 0) == 0.0

    def test_monotone_remap_invariance(self, rng):
        left, right = random_pair(rng)
        remapped = (right + 1.0) ** 3
        for _ in range(25):
            y = int(rng.integers(0, left.shape[0]))
            x = int(rng.integers(0, left.shape[1]))
            d = int(rng.integers(0, x + 1))
            base = census_cost(left, right, 7, y, x, d)
            assert census_cost(left, remapped, 7, y, x, d) == pytest.approx(base, rel=1e-12)

    def test_matches_bit_oracle(self, rng):
        left, right = random_pair(rng, 14, 18)
        for _ in range(60):
            y = int(rng.integers(0, 14))
            x = int(rng.integers(0, 18))
            d = int(rng.integers(0, x + 1))
            got = census_cost(left, right, CENSUS_DEFAULT_WINDOW, y, x, d)
            want = census_reference(left, right, CENSUS_DEFAULT_WINDOW, y, x, d)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    def test_out_of_range_disparity_is_sentinel(self, rng):
        left, right = random_pair(rng)
        assert census_cost(left, right, 9, 4, 3, 7) == COST_SENTINEL

    def test_costs_are_normalized_fractions(self, rng):
        left, right = random_pair(rng)
        for _ in range(20):
            y = int(rng.integers(0, left.shape[0]))
            x = int(rng.integers(0, left.shape[1]))
            c = census_cost(left, right, 5, y, x, 0)
            assert 0.0 <= c <= 1.0


class TestPixelwiseCost:
    def test_identical_images_zero(self, rng):
        img = rng.random((6, 8))
        for x in range(8):
            assert pixelwise_cost(img, img, 3, x, 0) == 0.0

    def test_constant_difference(self):
        left = np.full((5, 7), 0.9)
        right = np.full((5, 7), 0.2)
        assert pixelwise_cost(left, right, 2, 3, 0) == pytest.approx(0.7, rel=1e-12)

    def test_half_pixel_step_edge_costs_nothing(self):
        # left is a hard step; right is the same step sampled half a pixel
        # later, so plain |left - right| is 0.5 on the edge column while the
        # interval construction recognizes the match.
        step = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        half_shift = np.array([0.0, 0.0, 0.5, 1.0, 1.0, 1.0])
        left = np.tile(step, (3, 1))
        right = np.tile(half_shift, (3, 1))
        assert abs(left[1, 2] - right[1, 2]) == pytest.approx(0.5)
        assert pixelwise_cost(left, right, 1, 2, 0) == 0.0

    def test_matches_interval_oracle(self, rng):
        left, right = random_pair(rng, 9, 23)
        for _ in range(80):
            y = int(rng.integers(0, 9))
            x = int(rng.integers(0, 23))
            d = int(rng.integers(0, x + 1))
            got = pixelwise_cost(left, right, y, x, d)
            want = birchfield_tomasi_reference(left, right, y, x, d)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    def test_out_of_range_disparity_is_sentinel(self, rng):
        left, right = random_pair(rng)
        assert pixelwise_cost(left, right, 2, 4, 9) == COST_SENTINEL


def ambiguous_pair(seed=9, h=41, w=130, shift=6, patch=8):
    """Stereo pair whose probe pixel sits in a weakly textured square
    surrounded by strong smooth structure. An 11-wide window sees only the
    weak interior, so its cost over disparity is noisy and multimodal; a
    37-wide window also covers the distinctive surroundings and locks onto
    the true disparity."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w + shift].astype(np.float64)
    base = gaussian_filter(rng.standard_normal((h, w + shift)), 12.0, mode="reflect")
    base = 0.5 + 0.35 * base / np.abs(base).max()
    weak = gaussian_filter(rng.standard_normal((h, w + shift)), 1.2, mode="reflect")
    weak = 0.5 + 0.03 * weak / np.abs(weak).max()
    cy, cx = 20, 70
    mask = (np.abs(xs - cx) <= patch) & (np.abs(ys - cy) <= patch)
    ext = np.where(mask, weak, base)
    return ext[:, :w], ext[:, shift:]


class TestCostProfile:
    def test_constant_cost_gives_zero_profile(self, rng):
        left, right = random_pair(rng)

        def flat(_l, _r, _y, _x, _d):
            return 0.75

        prof = cost_profile(flat, (left, right), 4, 10, 8)
        np.testing.assert_array_equal(prof.costs, np.zeros(8))

    def test_normalization_bounds(self, rng):
        left, right = random_pair(rng, 15, 30)
        prof = cost_profile(windowed_cost(sad_cost, 5), (left, right), 7, 25, 12)
        assert prof.costs.min() == 0.0
        assert prof.costs.max() == 1.0
        assert np.all((prof.costs >= 0.0) & (prof.costs <= 1.0))

    def test_out_of_range_tail_normalizes_to_one(self, rng):
        left, right = random_pair(rng, 9, 12)
        prof = cost_profile(windowed_cost(sad_cost, 3), (left, right), 4, 3, 10)
        assert np.all(prof.raw[4:] == COST_SENTINEL)
        assert np.all(prof.costs[4:] == 1.0)

    def test_self_pair_minimum_at_zero(self, rng):
        img = rng.random((13, 40))
        fns = [
            windowed_cost(sad_cost, 7),
            windowed_cost(census_cost, 7),
            pixelwise_cost,
        ]
        for fn in fns:
            prof = cost_profile(fn, (img, img), 6, 30, 10)
            assert int(np.argmin(prof.raw)) == 0
            assert prof.raw[0] == 0.0

    def test_wide_window_has_fewer_local_minima(self):
        left, right = ambiguous_pair()
        y, x, ndisp = 20, 70, 16
        narrow = cost_profile(windowed_cost(census_cost, SMALL_COMPARE_WINDOW),
                              (left, right), y, x, ndisp)
        wide = cost_profile(windowed_cost(census_cost, LARGE_COMPARE_WINDOW),
                            (left, right), y, x, ndisp)
        n_narrow = local_minima_count(narrow.raw)
        n_wide = local_minima_count(wide.raw)
        assert n_wide < n_narrow
        assert int(np.argmin(wide.raw)) == 6

    def test_csv_format(self, rng, tmp_path):
        left, right = random_pair(rng)
        prof = cost_profile(windowed_cost(sad_cost, 3), (left, right), 5, 9, 4)
        path = tmp_path / "profile.csv"
        prof.write_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "d,cost"
        assert len(lines) == 5
        for d, line in enumerate(lines[1:]):
            fields = line.split(",")
            assert int(fields[0]) == d
            assert 0.0 <= float(fields[1]) <= 1.0

    def test_degenerate_profile_normalizer(self):
        flat = normalize_profile(np.full(6, 3.3))
        np.testing.assert_array_equal(flat, np.zeros(6))
        spike = normalize_profile(np.array([2.0, 2.0, COST_SENTINEL]))
        np.testing.assert_array_equal(spike, np.array([0.0, 0.0, 1.0]))

    def test_profile_records_pixel_and_length(self, rng):
        left, right = random_pair(rng)
        prof = cost_profile(pixelwise_cost, (left, right), 3, 11, 9)
        assert isinstance(prof, CostProfile)
        assert prof.pixel == (3, 11)
        assert prof.ndisp == 9


class TestVolumeBuilders:
    def check_volume(self, volume, scalar_fn, left, right, rng, n=120):
        h, w, nd = volume.shape
        for _ in range(n):
            y = int(rng.integers(0, h))
            x = int(rng.integers(0, w))
            d = int(rng.integers(0, nd))
            want = scalar_fn(left, right, y, x, d)
            np.testing.assert_allclose(volume[y, x, d], want, rtol=1e-5, atol=1e-7)

    def test_sad_volume_matches_scalar(self, rng):
        left, right = random_pair(rng, 12, 19)
        volume = sad_volume(left, right, 9, 5)
        self.check_volume(volume, windowed_cost(sad_cost, 5), left, right, rng)

    def test_census_volume_matches_scalar(self, rng):
        left, right = random_pair(rng, 12, 19)
        volume = census_volume(left, right, 8, 5)
        self.check_volume(volume, windowed_cost(census_cost, 5), left, right, rng)

    def test_pixelwise_volume_matches_scalar(self, rng):
        left, right = random_pair(rng, 10, 16)
        volume = pixelwise_volume(left, right, 7)
        self.check_volume(volume, pixelwise_cost, left, right, rng)

    def test_sentinel_region(self, rng):
        left, right = random_pair(rng, 6, 9)
        volume = sad_volume(left, right, 6, 3)
        for d in range(6):
            assert np.all(volume[:, :d, d] == COST_SENTINEL)
            assert np.all(volume[:, d:, d] < COST_SENTINEL)
