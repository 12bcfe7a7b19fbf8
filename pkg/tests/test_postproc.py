"""Post-processing stages against brute-force oracles and closed-form cases."""

import numpy as np
import pytest

from stereo4p.errors import ConfigError, ShapeError
from stereo4p.postproc import (
    DIRECTIONS_4,
    DIRECTIONS_8,
    CbcaParams,
    PipelineConfig,
    SgmParams,
    bilateral_filter,
    cbca,
    cross_arms,
    disabled_pipeline_config,
    left_right_check,
    median_filter,
    narrow_pipeline_config,
    pipeline_config_from_kv,
    pipeline_config_to_kv,
    pipeline_preset,
    read_pipeline_config,
    run_pipeline,
    sgm,
    sgm_direction,
    subpixel_refine,
    wide_pipeline_config,
    write_pipeline_config,
    wta,
)
from stereo4p.util import COST_SENTINEL

from oracles import (
    bilateral_filter_reference,
    cbca_arms_reference,
    cbca_reference,
    median_filter_reference,
    sgm_scanline_reference,
)


def random_volume(rng, h=8, w=9, nd=5):
    return rng.random((h, w, nd)).astype(np.float32)


class TestCrossArms:
    def test_matches_oracle(self, rng):
        for _ in range(10):
            guide = rng.random((9, 11))
            params = CbcaParams(intensity_threshold=0.3, max_arm=4)
            got = cross_arms(guide, params)
            want = cbca_arms_reference(guide, 0.3, 4)
            np.testing.assert_array_equal(got, want)

    def test_constant_guide_full_arms(self):
        guide = np.full((12, 12), 0.5)
        arms = cross_arms(guide, CbcaParams(intensity_threshold=0.01, max_arm=3))
        assert arms[6, 6].tolist() == [3, 3, 3, 3]
        assert arms[0, 0].tolist() == [0, 3, 0, 3]

    def test_arms_stop_at_edges(self):
        guide = np.zeros((7, 10))
        guide[:, 5:] = 1.0
        arms = cross_arms(guide, CbcaParams(intensity_threshold=0.5, max_arm=4))
        assert arms[3, 4, 1] == 0  # right arm blocked by the step
        assert arms[3, 5, 0] == 0  # left arm blocked from the other side
        assert arms[3, 4, 0] == 4


class TestCbca:
    def test_zero_iterations_identity(self, rng):
        volume = random_volume(rng)
        guide = rng.random(volume.shape[:2])
        out = cbca(volume, guide, CbcaParams(), iterations=0)
        np.testing.assert_array_equal(out, volume)
        assert out is not volume

    def test_constant_guide_matches_oracle(self, rng):
        volume = random_volume(rng, 7, 8, 4)
        guide = np.full((7, 8), 0.25)
        params = CbcaParams(intensity_threshold=0.01, max_arm=2)
        got = cbca(volume, guide, params, iterations=1)
        want = cbca_reference(volume, guide, 0.01, 2)
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_random_guide_matches_oracle(self, rng):
        for _ in range(8):
            volume = random_volume(rng, 7, 8, 3)
            guide = rng.random((7, 8))
            params = CbcaParams(intensity_threshold=0.35, max_arm=3)
            got = cbca(volume, guide, params, iterations=1)
            want = cbca_reference(volume, guide, 0.35, 3)
            np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_hard_edge_separates_regions(self, rng):
        h, w, nd = 8, 10, 3
        guide = np.zeros((h, w))
        guide[:, 5:] = 1.0
        volume = np.zeros((h, w, nd), dtype=np.float32)
        volume[:, :5, :] = 0.2
        volume[:, 5:, :] = 0.8
        out = cbca(volume, guide, CbcaParams(intensity_threshold=0.5, max_arm=4),
                   iterations=2)
        np.testing.assert_allclose(out[:, :5, :], 0.2, rtol=1e-6)
        np.testing.assert_allclose(out[:, 5:, :], 0.8, rtol=1e-6)

    def test_dim_mismatch_rejected(self, rng):
        volume = random_volume(rng)
        with pytest.raises(ShapeError):
            cbca(volume, rng.random((4, 4)), CbcaParams(), iterations=1)

    def test_sentinel_stays_finite(self, rng):
        volume = np.full((6, 6, 3), COST_SENTINEL, dtype=np.float32)
        guide = rng.random((6, 6))
        out = cbca(volume, guide, CbcaParams(), iterations=1)
        assert np.all(np.isfinite(out))
        assert np.all(out <= COST_SENTINEL)


class TestSgmDirection:
    def params(self):
        return SgmParams(P1=0.4, P2=3.0, Q1=2.0, Q2=4.0, V=0.5)

    def test_matches_scanline_oracle_all_directions(self, rng):
        params = self.params()
        for direction in DIRECTIONS_8:
            volume = random_volume(rng, 7, 8, 4)
            left = rng.random((7, 8))
            right = rng.random((7, 8))
            got = sgm_direction(volume, left, right, params, direction)
            want = sgm_scanline_reference(volume, left, right, params, direction)
            np.testing.assert_array_equal(got, want)

    def test_exact_on_many_random_volumes(self, rng):
        params = self.params()
        for _ in range(40):
            h = int(rng.integers(2, 10))
            w = int(rng.integers(2, 10))
            nd = int(rng.integers(1, 6))
            volume = rng.random((h, w, nd)).astype(np.float32)
            left = rng.random((h, w))
            right = rng.random((h, w))
            direction = DIRECTIONS_4[int(rng.integers(0, 4))]
            got = sgm_direction(volume, left, right, params, direction)
            want = sgm_scanline_reference(volume, left, right, params, direction)
            np.testing.assert_array_equal(got, want)

    def test_first_scanline_keeps_raw_costs(self, rng):
        volume = random_volume(rng, 5, 6, 3)
        img = rng.random((5, 6))
        out = sgm_direction(volume, img, img, self.params(), (0, 1))
        np.testing.assert_array_equal(out[:, 0, :], volume[:, 0, :].astype(np.float64))

    def test_bad_direction_rejected(self, rng):
        volume = random_volume(rng)
        img = rng.random(volume.shape[:2])
        with pytest.raises(ConfigError):
            sgm_direction(volume, img, img, self.params(), (0, 0))


class TestSgm:
    def test_constant_volume_keeps_wta(self, rng):
        volume = np.full((6, 7, 4), 0.3, dtype=np.float32)
        img = rng.random((6, 7))
        out = sgm(volume, (img, img), SgmParams())
        np.testing.assert_array_equal(wta(out), wta(volume))

    def test_equals_mean_of_directions(self, rng):
        volume = random_volume(rng, 6, 7, 4)
        left, right = rng.random((6, 7)), rng.random((6, 7))
        params = SgmParams(P1=0.5, P2=2.0, Q1=2.0, Q2=4.0, V=0.6)
        total = np.zeros(volume.shape, dtype=np.float64)
        for direction in DIRECTIONS_4:
            total = total + sgm_direction(volume, left, right, params, direction)
        total /= 4
        got = sgm(volume, (left, right), params)
        np.testing.assert_array_equal(got, total.astype(np.float32))

    def test_thread_count_invariant(self, rng):
        volume = random_volume(rng, 6, 7, 4)
        left, right = rng.random((6, 7)), rng.random((6, 7))
        params = SgmParams(P1=0.5, P2=2.0, Q1=2.0, Q2=4.0, V=0.6)
        a = sgm(volume, (left, right), params, threads=1)
        b = sgm(volume, (left, right), params, threads=4)
        np.testing.assert_array_equal(a, b)

    def test_eight_directions(self, rng):
        volume = random_volume(rng, 6, 6, 3)
        img = rng.random((6, 6))
        out = sgm(volume, img, SgmParams(), num_directions=8)
        assert out.shape == volume.shape
        with pytest.raises(ConfigError):
            sgm(volume, img, SgmParams(), num_directions=5)

    def test_large_p2_forces_constant_choice(self):
        # Two-pixel scanline, enumerated by hand: the second pixel prefers
        # disparity 1 on raw costs, but a huge P2 (and P1) makes any change
        # from the first pixel's clear disparity-0 winner too expensive.
        volume = np.zeros((1, 2, 2), dtype=np.float32)
        volume[0, 0] = [0.0, 5.0]
        volume[0, 1] = [1.0, 0.8]
        img = np.zeros((1, 2))
        params = SgmParams(P1=50.0, P2=100.0, Q1=1.0, Q2=1.0, V=9.9)
        out = sgm_direction(volume, img, img, params, (0, 1))
        assert int(np.argmin(out[0, 1])) == 0
        # And with tiny penalties the raw preference survives.
        mild = SgmParams(P1=0.01, P2=0.05, Q1=1.0, Q2=1.0, V=9.9)
        out_mild = sgm_direction(volume, img, img, mild, (0, 1))
        assert int(np.argmin(out_mild[0, 1])) == 1

    def test_invalid_params_rejected(self, rng):
        volume = random_volume(rng)
        img = rng.random(volume.shape[:2])
        with pytest.raises(ConfigError):
            sgm(volume, img, SgmParams(P1=2.0, P2=1.0))
        with pytest.raises(ConfigError):
            sgm(volume, img, SgmParams(Q1=0.5))
        with pytest.raises(ConfigError):
            sgm(volume, img, SgmParams(V=-1.0))


class TestWta:
    def test_unique_minima(self, rng):
        volume = random_volume(rng, 6, 6, 5)
        disp = wta(volume)
        for y in range(6):
            for x in range(6):
                assert disp[y, x] == np.argmin(volume[y, x])

    def test_tie_goes_to_smaller_disparity(self):
        volume = np.ones((1, 1, 7), dtype=np.float32)
        volume[0, 0, 2] = 0.5
        volume[0, 0, 5] = 0.5
        assert wta(volume)[0, 0] == 2.0

    def test_all_sentinel_pixel_invalid(self):
        volume = np.full((2, 2, 3), COST_SENTINEL, dtype=np.float32)
        volume[0, 0, 1] = 1.0
        disp = wta(volume)
        assert disp[0, 0] == 1.0
        assert np.isnan(disp[0, 1]) and np.isnan(disp[1, 1])

    def test_constant_shift_invariance(self, rng):
        volume = random_volume(rng, 5, 5, 4)
        np.testing.assert_array_equal(wta(volume), wta(volume + 2.5))


class TestSubpixel:
    def volume_with_costs(self, costs, at=3, nd=8):
        volume = np.full((1, 1, nd), 9.0, dtype=np.float32)
        volume[0, 0, at - 1: at + 2] = costs
        return volume

    def test_symmetric_costs_zero_offset(self):
        volume = self.volume_with_costs([2.0, 1.0, 2.0])
        disp = np.array([[3.0]], dtype=np.float32)
        assert subpixel_refine(volume, disp)[0, 0] == 3.0

    def test_closed_form_vertex(self):
        volume = self.volume_with_costs([3.0, 1.0, 2.0])
        disp = np.array([[3.0]], dtype=np.float32)
        got = float(subpixel_refine(volume, disp)[0, 0])
        assert got == pytest.approx(3.0 + (3.0 - 2.0) / (2.0 * (3.0 + 2.0 - 2.0)), rel=1e-6)

    def test_vertex_matches_dense_quadratic_sampling(self, rng):
        # The parabola through three integer samples of a true quadratic must
        # peak where the quadratic does.
        for _ in range(20):
            center = 4
            true_min = center + float(rng.uniform(-0.45, 0.45))
            a = float(rng.uniform(0.5, 3.0))
            ds = np.arange(10, dtype=np.float64)
            costs = a * (ds - true_min) ** 2 + 0.3
            volume = costs[None, None, :].astype(np.float32)
            disp = np.array([[float(center)]], dtype=np.float32)
            got = float(subpixel_refine(volume, disp)[0, 0])
            assert got == pytest.approx(true_min, abs=1e-3)

    def test_offsets_bounded(self, rng):
        volume = random_volume(rng, 8, 8, 6)
        disp = wta(volume)
        refined = subpixel_refine(volume, disp)
        delta = refined - disp
        assert np.nanmax(np.abs(delta)) <= 0.5 + 1e-6

    def test_boundary_disparities_unrefined(self, rng):
        volume = random_volume(rng, 4, 4, 5)
        disp = np.zeros((4, 4), dtype=np.float32)
        np.testing.assert_array_equal(subpixel_refine(volume, disp), disp)

    def test_invalid_pixels_stay_invalid(self, rng):
        volume = random_volume(rng, 3, 3, 5)
        disp = wta(volume)
        disp[1, 1] = np.nan
        refined = subpixel_refine(volume, disp)
        assert np.isnan(refined[1, 1])


class TestMedianFilter:
    def test_constant_map_unchanged(self):
        disp = np.full((9, 9), 4.0, dtype=np.float32)
        np.testing.assert_array_equal(median_filter(disp, 2), disp)

    def test_outlier_removed(self):
        disp = np.full((9, 9), 4.0, dtype=np.float32)
        disp[4, 4] = 60.0
        assert median_filter(disp, 2)[4, 4] == 4.0

    def test_matches_sort_oracle(self, rng):
        for _ in range(6):
            disp = rng.random((10, 11)).astype(np.float32) * 16
            holes = rng.random((10, 11)) < 0.15
            disp[holes] = np.nan
            got = median_filter(disp, 2)
            want = median_filter_reference(disp.astype(np.float64), 2)
            np.testing.assert_allclose(got, want.astype(np.float32), rtol=1e-6)

    def test_radius_zero_identity(self, rng):
        disp = rng.random((5, 5)).astype(np.float32)
        np.testing.assert_array_equal(median_filter(disp, 0), disp)


class TestBilateralFilter:
    def test_constant_map_unchanged(self, rng):
        disp = np.full((8, 8), 2.5, dtype=np.float32)
        guide = rng.random((8, 8))
        out = bilateral_filter(disp, guide, 2.0, 0.1, radius=3)
        np.testing.assert_allclose(out, disp, rtol=1e-6)

    def test_matches_direct_oracle(self, rng):
        disp = (rng.random((9, 10)) * 8).astype(np.float32)
        disp[2, 3] = np.nan
        guide = rng.random((9, 10))
        got = bilateral_filter(disp, guide, 1.5, 0.2, radius=3)
        want = bilateral_filter_reference(disp.astype(np.float64), guide, 1.5, 0.2, 3)
        np.testing.assert_allclose(
            got[np.isfinite(disp)], want[np.isfinite(disp)].astype(np.float32), rtol=1e-5)
        assert np.isnan(got[2, 3])

    def test_edge_preserved_better_than_plain_average(self):
        h, w = 10, 12
        guide = np.zeros((h, w))
        guide[:, 6:] = 1.0
        disp = np.zeros((h, w), dtype=np.float32)
        disp[:, 6:] = 8.0
        out = bilateral_filter(disp, guide, 3.0, 0.05, radius=4)
        assert abs(out[5, 5] - 0.0) < 0.5
        assert abs(out[5, 6] - 8.0) < 0.5


class TestLeftRightCheck:
    def test_consistent_map_untouched(self):
        h, w, nd, d0 = 6, 12, 5, 2
        volume = np.full((h, w, nd), 1.0, dtype=np.float32)
        volume[:, :, d0] = 0.0
        out = left_right_check(volume)
        np.testing.assert_array_equal(out, np.full((h, w), float(d0), dtype=np.float32))

    def test_inconsistent_pixel_replaced_from_row(self):
        h, w, nd = 1, 8, 4
        volume = np.full((h, w, nd), 1.0, dtype=np.float32)
        volume[:, :, 1] = 0.0          # consistent disparity-1 winner
        volume[0, 4, 1] = 1.0
        volume[0, 4, 3] = 0.0          # a left-only spike the right view rejects
        out = left_right_check(volume)
        assert out[0, 4] == 1.0


class TestPipeline:
    def test_all_stages_off_equals_wta(self, rng):
        volume = random_volume(rng, 7, 9, 5)
        pair = (rng.random((7, 9)), rng.random((7, 9)))
        result = run_pipeline(volume, pair, disabled_pipeline_config())
        np.testing.assert_array_equal(result.disparity, wta(volume))
        np.testing.assert_array_equal(result.raw_wta, wta(volume))

    def test_wide_preset_runs_one_aggregation_pass(self, rng):
        cfg = wide_pipeline_config()
        assert cfg.cbca.iterations_1 == 0
        assert cfg.cbca.iterations_2 == 1
        assert (cfg.sgm.P1, cfg.sgm.P2) == (1.3, 17.0)
        assert (cfg.sgm.Q1, cfg.sgm.Q2, cfg.sgm.V) == (3.6, 36.0, 1.4)
        volume = random_volume(rng, 6, 8, 4)
        pair = (rng.random((6, 8)), rng.random((6, 8)))
        result = run_pipeline(volume, pair, cfg)
        stages = [name for name, _ in result.timings]
        assert stages.count("cbca_1") == 0
        assert stages.count("cbca_2") == 1
        assert "sgm" in stages

    def test_thread_count_invariant(self, rng):
        volume = random_volume(rng, 6, 8, 4)
        pair = (rng.random((6, 8)), rng.random((6, 8)))
        cfg = wide_pipeline_config()
        a = run_pipeline(volume, pair, cfg, threads=1)
        b = run_pipeline(volume, pair, cfg, threads=4)
        np.testing.assert_array_equal(a.disparity, b.disparity)

    def test_preset_lookup(self):
        assert pipeline_preset("wide").cbca.iterations_1 == 0
        assert pipeline_preset("narrow").cbca.iterations_1 == 2
        with pytest.raises(ConfigError):
            pipeline_preset("nope")

    def test_config_roundtrip(self, tmp_path):
        cfg = narrow_pipeline_config()
        cfg.median_radius = 3
        cfg.lr_check_enabled = True
        path = tmp_path / "pipeline.cfg"
        write_pipeline_config(path, cfg)
        loaded = read_pipeline_config(path)
        assert loaded == cfg

    def test_kv_names(self):
        pairs = pipeline_config_to_kv(wide_pipeline_config())
        for key in ("cbca_num_iterations_1", "cbca_num_iterations_2",
                    "sgm_P1", "sgm_P2", "sgm_Q1", "sgm_Q2", "sgm_V"):
            assert key in pairs
        assert pairs["cbca_num_iterations_1"] == "0"
        assert pairs["sgm_P2"] == "17.0"
        roundtrip = pipeline_config_from_kv(pairs)
        assert roundtrip == wide_pipeline_config()

    def test_validation_rejects_bad_config(self):
        cfg = PipelineConfig(sgm=SgmParams(P1=5.0, P2=1.0))
        with pytest.raises(ConfigError):
            cfg.validate()
