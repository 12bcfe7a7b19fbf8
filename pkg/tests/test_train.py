"""Patch sampling, SGD training, fine-tuning, and gradient checks."""

import math

import numpy as np
import pytest

from stereo4p.errors import ConfigError, DataError, ShapeError, TrainingDivergedError
from stereo4p.network import NetworkSpec, Weights, narrow_tiny_spec, score_pair, wide_tiny_spec
from stereo4p.pyramid import pyramid_pool
from stereo4p.synthetic import make_scene
from stereo4p.train import (
    PatchSample,
    TrainSchedule,
    _center_descriptor,
    _center_descriptor_backward,
    _forward_logit,
    crop_center,
    finetune_head,
    grad_check,
    read_schedule,
    sample_patches,
    schedule_from_kv,
    schedule_to_kv,
    separation_auc,
    similarity_scores,
    train,
    write_schedule,
)
from stereo4p.util import standardize_image

from test_network import distance_head_weights


def scene_dataset(seeds, **kwargs):
    return [make_scene(s, height=72, width=96, ndisp=11, **kwargs).sample
            for s in seeds]


class TestSchedule:
    def test_rate_per_epoch(self):
        s = TrainSchedule().validate()
        assert [s.rate_for_epoch(e) for e in (1, 2, 3, 4)] == \
            [0.003, 0.003, 0.0003, 0.0003]

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainSchedule(epochs=0).validate()
        with pytest.raises(ConfigError):
            TrainSchedule(lr_initial=0.001, lr_final=0.01).validate()
        with pytest.raises(ConfigError):
            TrainSchedule(loss="mse").validate()
        with pytest.raises(ConfigError):
            TrainSchedule(batch_size=0).validate()
        TrainSchedule(lr_initial=0.0, lr_final=0.0).validate()

    def test_kv_roundtrip(self, tmp_path):
        s = TrainSchedule(epochs=6, lr_initial=0.01, lr_final=0.002,
                          lr_drop_epoch=5, batch_size=8, seed=42, loss="hinge")
        assert schedule_from_kv(schedule_to_kv(s)) == s
        path = tmp_path / "sched.cfg"
        write_schedule(path, s)
        assert read_schedule(path) == s

    def test_kv_defaults(self):
        assert schedule_from_kv({}) == TrainSchedule()


class TestSamplePatches:
    def test_deterministic(self):
        ds = scene_dataset([4])
        a = sample_patches(ds, 40, seed=5)
        b = sample_patches(ds, 40, seed=5)
        assert len(a) == len(b) == 40
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.left, sb.left)
            np.testing.assert_array_equal(sa.right, sb.right)
            assert (sa.label, sa.y, sa.x, sa.offset) == (sb.label, sb.y, sb.x, sb.offset)

    def test_balanced_and_alternating(self):
        samples = sample_patches(scene_dataset([4, 5]), 60, seed=1)
        labels = [s.label for s in samples]
        assert labels == [1.0, 0.0] * 30

    def test_offset_bounds_scanned(self):
        samples = sample_patches(scene_dataset([2, 3]), 200, seed=7)
        for s in samples:
            assert s.left.shape == (37, 37) and s.right.shape == (37, 37)
            if s.label == 1.0:
                assert abs(s.offset) <= 1
            else:
                assert 2 <= abs(s.offset) <= 8

    def test_patches_come_from_standardized_planes(self):
        ds = scene_dataset([8])
        samples = sample_patches(ds, 10, seed=3)
        lstd = standardize_image(ds[0].left).astype(np.float32)
        rstd = standardize_image(ds[0].right).astype(np.float32)
        s = samples[0]
        np.testing.assert_array_equal(
            s.left, lstd[s.y - 18: s.y + 19, s.x - 18: s.x + 19])
        c = s.x - s.disparity + s.offset
        np.testing.assert_array_equal(
            s.right, rstd[s.y - 18: s.y + 19, c - 18: c + 19])

    def test_too_small_dataset(self):
        ds = scene_dataset([1])
        tiny = make_scene(1, height=20, width=30, ndisp=5).sample
        with pytest.raises(DataError, match="dataset too small"):
            sample_patches([tiny], 10, seed=0)
        with pytest.raises(ConfigError):
            sample_patches(ds, 11, seed=0)
        with pytest.raises(ConfigError):
            sample_patches(ds, 10, seed=0, jitter=3, neg_min=2)

    def test_missing_gt_rejected(self):
        s = make_scene(1, height=60, width=80, ndisp=7).sample
        s.gt = None
        with pytest.raises(DataError, match="ground-truth"):
            sample_patches([s], 10, seed=0)


class TestCenterDescriptor:
    def test_matches_pyramid_pool_center(self, rng):
        for mode in ("max", "mean"):
            for shape in ((27, 27, 6), (9, 13, 4), (5, 5, 3)):
                feat = rng.standard_normal(shape).astype(np.float32)
                sizes = (27, 9, 3, 1)
                vec, _ = _center_descriptor(feat, sizes, mode)
                full = pyramid_pool(feat, sizes, mode)
                center = full[shape[0] // 2, shape[1] // 2, :]
                np.testing.assert_allclose(vec, center, rtol=1e-6, atol=1e-7)

    def test_max_backward_routes_to_argmax(self, rng):
        feat = rng.standard_normal((7, 7, 2))
        vec, cache = _center_descriptor(feat, (5,), "max")
        g = _center_descriptor_backward(np.array([1.0, 2.0]), feat.shape, cache)
        for ch, scale in ((0, 1.0), (1, 2.0)):
            win = feat[1:6, 1:6, ch]
            iy, ix = np.unravel_index(np.argmax(win), win.shape)
            assert g[1 + iy, 1 + ix, ch] == scale
        assert g.sum() == 3.0

    def test_mean_backward_spreads_evenly(self, rng):
        feat = rng.standard_normal((5, 5, 1))
        vec, cache = _center_descriptor(feat, (3,), "mean")
        g = _center_descriptor_backward(np.array([9.0]), feat.shape, cache)
        np.testing.assert_allclose(g[1:4, 1:4, 0], 1.0)
        assert g[0, :, 0].sum() == 0.0


class TestForwardAgreesWithInference:
    def test_logit_matches_score_pair(self, rng):
        for spec in (narrow_tiny_spec(), wide_tiny_spec()):
            w = Weights.random(spec, rng)
            p = spec.total_patch
            pl = rng.standard_normal((p, p)).astype(np.float32)
            pr = rng.standard_normal((p, p)).astype(np.float32)
            z, _ = _forward_logit(pl, pr, spec, w)
            sim = score_pair(pl, pr, spec, w)
            assert math.isclose(1.0 / (1.0 + math.exp(-z)), float(sim), rel_tol=1e-5)

    def test_crop_center(self, rng):
        patch = rng.standard_normal((37, 37))
        inner = crop_center(patch, 11)
        assert inner.shape == (11, 11)
        assert inner[5, 5] == patch[18, 18]
        with pytest.raises(ShapeError):
            crop_center(patch, 38)
        with pytest.raises(ShapeError):
            crop_center(patch, 10)


class TestTrain:
    def small_samples(self, count=64, seeds=(4, 5)):
        return sample_patches(scene_dataset(list(seeds)), count, seed=11)

    def test_loss_decreases_and_is_reproducible(self):
        samples = self.small_samples()
        spec = narrow_tiny_spec()
        sched = TrainSchedule(epochs=4, batch_size=16, seed=3)
        a = train(spec, samples, sched)
        b = train(spec, samples, sched)
        assert a.epoch_mean_loss[-1] < a.epoch_mean_loss[0]
        for la, lb in zip(a.weights.layers(), b.weights.layers()):
            np.testing.assert_array_equal(la.kernel, lb.kernel)
            np.testing.assert_array_equal(la.bias, lb.bias)
        assert a.rows == b.rows

    def test_schedule_visible_in_rows(self):
        samples = self.small_samples(32)
        result = train(narrow_tiny_spec(), samples,
                       TrainSchedule(epochs=4, batch_size=16, seed=1))
        for epoch, step, lr, loss in result.rows:
            assert lr == (0.003 if epoch <= 2 else 0.0003)
            assert np.isfinite(loss)
        assert {r[0] for r in result.rows} == {1, 2, 3, 4}

    def test_loss_csv_format(self, tmp_path):
        samples = self.small_samples(16)
        result = train(narrow_tiny_spec(), samples,
                       TrainSchedule(epochs=1, batch_size=8, seed=1))
        path = tmp_path / "loss.csv"
        result.write_loss_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,step,lr,loss"
        assert len(lines) == 1 + len(result.rows)
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "1" and first[2] == "0.003"

    def test_zero_learning_rate_keeps_weights(self):
        samples = self.small_samples(16)
        spec = narrow_tiny_spec()
        sched = TrainSchedule(lr_initial=0.0, lr_final=0.0, epochs=2,
                              batch_size=8, seed=9)
        init = Weights.random(spec, np.random.default_rng(123))
        result = train(spec, samples, sched, init=init)
        for la, lb in zip(result.weights.layers(), init.layers()):
            np.testing.assert_array_equal(la.kernel, lb.kernel)
            np.testing.assert_array_equal(la.bias, lb.bias)

    def test_duplicated_batch_loss_equals_single(self):
        samples = self.small_samples(2)[:1]
        spec = narrow_tiny_spec()
        one = train(spec, samples, TrainSchedule(epochs=1, batch_size=1, seed=5))
        two = train(spec, samples * 2, TrainSchedule(epochs=1, batch_size=2, seed=5))
        assert one.rows[0][3] == two.rows[0][3]

    def test_nan_input_diverges_with_diagnostic(self):
        samples = self.small_samples(8)
        bad = PatchSample(left=np.full((37, 37), np.nan, dtype=np.float32),
                          right=samples[0].right, label=1.0)
        with pytest.raises(TrainingDivergedError, match="epoch 1"):
            train(narrow_tiny_spec(), [bad] * 4,
                  TrainSchedule(epochs=1, batch_size=2, seed=0))

    def test_hinge_loss_runs(self):
        samples = self.small_samples(32)
        result = train(narrow_tiny_spec(), samples,
                       TrainSchedule(epochs=2, batch_size=16, seed=2, loss="hinge"))
        assert result.epoch_mean_loss[-1] <= result.epoch_mean_loss[0]

    def test_trained_net_separates_held_out(self):
        # Desk-scale setup: the default 0.003 rate is sized for far larger
        # patch sets, so this run uses a hotter rate on more samples.
        train_samples = sample_patches(scene_dataset([4, 5, 6]), 6144, seed=11)
        held_out = sample_patches(scene_dataset([9]), 128, seed=99)
        spec = narrow_tiny_spec()
        sched = TrainSchedule(batch_size=16, seed=3, lr_initial=0.02, lr_final=0.002)
        result = train(spec, train_samples, sched)
        auc = separation_auc(spec, result.weights, held_out)
        assert auc > 0.9
        assert result.epoch_mean_loss[-1] < result.epoch_mean_loss[0]


class TestSimilarityScores:
    def test_distance_net_separates_exact_pairs(self, rng):
        scene = make_scene(6, height=72, width=96, ndisp=11, noise_sigma=0.0)
        samples = sample_patches([scene.sample], 60, seed=2, jitter=0)
        spec = narrow_tiny_spec()
        w = distance_head_weights(spec, rng)
        auc = separation_auc(spec, w, samples)
        assert auc > 0.9
        scores = similarity_scores(spec, w, samples)
        assert scores.shape == (60,)
        assert np.all((scores >= 0) & (scores <= 1))

    def test_auc_needs_both_classes(self, rng):
        spec = narrow_tiny_spec()
        w = Weights.random(spec, rng)
        ones = [PatchSample(left=np.zeros((37, 37), np.float32),
                            right=np.zeros((37, 37), np.float32), label=1.0)]
        with pytest.raises(DataError):
            separation_auc(spec, w, ones)


class TestFinetune:
    def test_trunk_frozen_head_trained(self):
        samples = sample_patches(scene_dataset([4]), 48, seed=6)
        narrow = narrow_tiny_spec()
        wide = wide_tiny_spec()
        pretrained = Weights.random(narrow, np.random.default_rng(77))
        sched = TrainSchedule(epochs=2, batch_size=16, seed=13)
        result = finetune_head(pretrained, wide, samples, sched)
        assert result.weights.spec == wide
        for la, lb in zip(result.weights.trunk, pretrained.trunk):
            np.testing.assert_array_equal(la.kernel, lb.kernel)
            np.testing.assert_array_equal(la.bias, lb.bias)
        fresh = Weights.random(wide, np.random.default_rng(13))
        moved = any(not np.array_equal(a.kernel, b.kernel)
                    for a, b in zip(result.weights.head, fresh.head))
        assert moved
        assert result.weights.provenance["training"] == "head-only"

    def test_trunk_shape_mismatch_rejected(self):
        small = NetworkSpec(trunk_channels=8, head_channels=16).validate()
        pretrained = Weights.random(small, np.random.default_rng(1))
        samples = sample_patches(scene_dataset([4]), 8, seed=0)
        with pytest.raises(ShapeError, match="trunk"):
            finetune_head(pretrained, wide_tiny_spec(), samples,
                          TrainSchedule(epochs=1))


class TestGradCheck:
    def test_narrow_tiny_gradients(self):
        report = grad_check(narrow_tiny_spec(), seed=5)
        assert report.points >= 20
        assert report.max_rel_err < 1e-3
        assert "overall" in report.format()

    def test_wide_tiny_gradients_max_mode(self):
        report = grad_check(wide_tiny_spec(), seed=5)
        assert report.points >= 20
        assert report.max_rel_err < 1e-3

    def test_wide_tiny_gradients_mean_mode(self):
        spec = NetworkSpec(trunk_channels=16, head_channels=32,
                           fourp_sizes=(27, 9, 3, 1),
                           pooling_mode="mean").validate()
        report = grad_check(spec, seed=5)
        assert report.max_rel_err < 1e-3

    def test_every_layer_reported(self):
        report = grad_check(narrow_tiny_spec(), seed=5)
        names = {e.layer for e in report.entries}
        assert names == {"trunk0", "trunk1", "trunk2", "trunk3", "trunk4",
                         "head0", "head1", "head2"}
