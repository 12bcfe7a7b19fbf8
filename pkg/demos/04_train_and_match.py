"""End-to-end walkthrough: train a matcher, widen it, match held-out pairs.

The workflow mirrors real use at desk scale. First a small plain network
(11x11 effective patch) is trained end to end on textured synthetic scenes.
Then its convolutional trunk is frozen and two decision heads are fit on a
mix of textured and weakly textured scenes with the same schedule: one head
reads the trunk features directly, the other reads them after per-pixel
pyramid pooling, which widens the effective patch to 37x37 without adding
parameters to the trunk. Both networks then match held-out weak-texture
scenes, where the wider context pays off, and one scene is run through the
full refinement pipeline. Expect roughly a minute and a half of compute.

Run with --out DIR to save the pooled network's disparity maps.
"""

import argparse
import os
import time

import numpy as np

from stereo4p.dataio import bad_pixel_error, save_disparity_render, write_pfm
from stereo4p.network import compute_cost_volume, narrow_tiny_spec, wide_tiny_spec
from stereo4p.postproc import pipeline_preset, run_pipeline, wta
from stereo4p.synthetic import make_scene, weak_texture_scene
from stereo4p.train import TrainSchedule, finetune_head, sample_patches, train

EVAL_SEEDS = (101, 103, 105, 106)
SHOWCASE_SEED = 106


def structural_mask(scene, margin=5):
    """Ground-truth pixels that a matcher can actually decide.

    Drops a thin border band plus every pixel whose match would sit left of
    the right image, so the scores reflect matching quality rather than
    missing evidence at the rim.
    """
    gt = scene.sample.gt
    h, w = gt.shape
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((yy >= margin) & (yy < h - margin) & (xx < w - margin)
              & (xx >= margin + np.where(np.isfinite(gt), gt, 0)))
    return scene.eval_mask & inside


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", help="directory for disparity outputs")
    args = parser.parse_args()
    t0 = time.time()

    print("stage 1: training the plain network end to end")
    train_scenes = [make_scene(s, ndisp=17) for s in (4, 5, 6, 7)]
    samples = sample_patches([sc.sample for sc in train_scenes], 6144, seed=7)
    schedule = TrainSchedule(epochs=5, lr_drop_epoch=4, batch_size=32, seed=3,
                             lr_initial=0.02, lr_final=0.002)
    base = train(narrow_tiny_spec(), samples, schedule)
    for epoch, loss in enumerate(base.epoch_mean_loss, start=1):
        print(f"  epoch {epoch}: mean loss {loss:.4f}")

    print("stage 2: freezing the trunk, fitting plain and pooled heads")
    head_scenes = train_scenes[:3] + [weak_texture_scene(s, ndisp=17, region=27)
                                      for s in (201, 202, 203)]
    head_samples = sample_patches([sc.sample for sc in head_scenes], 12288,
                                  seed=11)
    head_schedule = TrainSchedule(epochs=16, lr_drop_epoch=13, batch_size=32,
                                  seed=3, lr_initial=0.003, lr_final=0.0003)
    pooled = finetune_head(base.weights, wide_tiny_spec(), head_samples,
                           head_schedule)
    plain = finetune_head(base.weights, narrow_tiny_spec(), head_samples,
                          head_schedule)
    print(f"  final mean loss: plain {plain.epoch_mean_loss[-1]:.4f}, "
          f"pooled {pooled.epoch_mean_loss[-1]:.4f}")
    print(f"  training took {time.time() - t0:.0f}s")

    nets = (("plain", narrow_tiny_spec(), plain.weights),
            ("pooled", wide_tiny_spec(), pooled.weights))

    print("raw matching error on held-out weak-texture scenes (bad-2.0)")
    averages = {}
    for name, spec, weights in nets:
        errors = []
        for seed in EVAL_SEEDS:
            scene = weak_texture_scene(seed, ndisp=17, region=27)
            volume = compute_cost_volume(scene.sample.left, scene.sample.right,
                                         scene.sample.ndisp, spec, weights,
                                         threads=4)
            errors.append(bad_pixel_error(wta(volume), scene.sample.gt, 2.0,
                                          mask=structural_mask(scene)))
        joined = "  ".join(f"scene-{s} {e:5.2f}%"
                           for s, e in zip(EVAL_SEEDS, errors))
        averages[name] = float(np.mean(errors))
        print(f"  {name:6s} {joined}  | average {averages[name]:5.2f}%")
    gain = averages["plain"] - averages["pooled"]
    print(f"  pooling removes {gain:.2f} points of error on average")

    print(f"full pipeline on scene-{SHOWCASE_SEED} (same preset for both)")
    scene = weak_texture_scene(SHOWCASE_SEED, ndisp=17, region=27)
    mask = structural_mask(scene)
    results = {}
    for name, spec, weights in nets:
        volume = compute_cost_volume(scene.sample.left, scene.sample.right,
                                     scene.sample.ndisp, spec, weights,
                                     threads=4)
        raw = bad_pixel_error(wta(volume), scene.sample.gt, 2.0, mask=mask)
        piped = run_pipeline(volume, (scene.sample.left, scene.sample.right),
                             pipeline_preset("wide"), threads=4)
        full = bad_pixel_error(piped.disparity, scene.sample.gt, 2.0,
                               mask=mask)
        results[name] = piped
        print(f"  {name:6s} bad-2.0: raw {raw:5.2f}%  -> pipeline {full:5.2f}%")

    print(f"total time {time.time() - t0:.0f}s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        disp = results["pooled"].disparity.copy()
        disp[~np.isfinite(disp)] = 0.0
        write_pfm(disp, os.path.join(args.out, "disp.pfm"))
        save_disparity_render(disp, scene.sample.ndisp,
                              os.path.join(args.out, "disp.png"))
        print(f"wrote {args.out}/disp.pfm and {args.out}/disp.png")


if __name__ == "__main__":
    main()
