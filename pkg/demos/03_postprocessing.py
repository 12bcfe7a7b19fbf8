"""What each post-processing stage buys, measured on a known scene.

Starting from a raw census cost volume, the script switches the pipeline
stages on cumulatively (cross-based aggregation, semi-global smoothing,
subpixel fit, median and bilateral filtering) and reports the bad-2.0 error
after each configuration, so the contribution of every stage is visible.
Run with --out DIR to also save gray renders of the raw and final maps.
"""

import argparse

import numpy as np

from stereo4p.costs import census_volume
from stereo4p.dataio import bad_pixel_error, save_disparity_render
from stereo4p.postproc import disabled_pipeline_config, run_pipeline, wta
from stereo4p.synthetic import make_scene


def config_ladder():
    """Pipeline configurations from nothing enabled to everything enabled."""
    steps = []

    base = disabled_pipeline_config()
    steps.append(("raw winner-takes-all", base))

    cfg = disabled_pipeline_config()
    cfg.cbca.iterations_1 = 2
    steps.append(("+ cross aggregation x2", cfg))

    cfg = disabled_pipeline_config()
    cfg.cbca.iterations_1 = 2
    cfg.sgm_enabled = True
    steps.append(("+ semi-global smoothing", cfg))

    cfg = disabled_pipeline_config()
    cfg.cbca.iterations_1 = 2
    cfg.sgm_enabled = True
    cfg.cbca.iterations_2 = 2
    cfg.subpixel_enabled = True
    steps.append(("+ second aggregation, subpixel", cfg))

    cfg = disabled_pipeline_config()
    cfg.cbca.iterations_1 = 2
    cfg.sgm_enabled = True
    cfg.cbca.iterations_2 = 2
    cfg.subpixel_enabled = True
    cfg.median_radius = 2
    cfg.bilateral_enabled = True
    steps.append(("+ median and bilateral", cfg))
    return steps


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", help="directory for disparity renders")
    args = parser.parse_args()

    scene = make_scene(21, ndisp=17)
    left, right = scene.sample.left, scene.sample.right
    print("building a census cost volume (9x9 window, 17 disparities)...")
    volume = census_volume(left, right, scene.sample.ndisp, window=9)

    final = None
    for label, cfg in config_ladder():
        result = run_pipeline(volume, (left, right), cfg)
        err = bad_pixel_error(result.disparity, scene.sample.gt, 2.0,
                              mask=scene.eval_mask)
        print(f"{label:32s} bad-2.0 = {err:6.2f}%")
        final = result

    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        raw = wta(volume)
        raw[~np.isfinite(raw)] = 0.0
        save_disparity_render(raw, scene.sample.ndisp,
                              os.path.join(args.out, "raw.png"))
        disp = final.disparity.copy()
        disp[~np.isfinite(disp)] = 0.0
        save_disparity_render(disp, scene.sample.ndisp,
                              os.path.join(args.out, "final.png"))
        print(f"renders written to {args.out}/raw.png and {args.out}/final.png")


if __name__ == "__main__":
    main()
