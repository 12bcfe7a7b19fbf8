"""Command line front end: match, train, finetune, eval, profile, gradcheck.

Every command loads and validates each referenced file before any compute
starts, so a typo fails fast. Failure paths keep distinct exit codes:

* 2 - inputs missing, unreadable, or inconsistent
* 3 - a compute stage raised, or a requested check did not pass
* 4 - training diverged (non-finite loss)
* 5 - an output file could not be written

Output files go through the atomic io helpers (temp file, then rename), so
an interrupted run never leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import costs as costs_mod
from . import dataio
from .errors import (ConfigError, DataError, ShapeError, Stereo4PError,
                     TrainingDivergedError)
from .network import (NetworkSpec, Weights, compute_cost_volume, load_weights,
                      read_spec, save_weights, score_pair, spec_preset,
                      spec_to_kv)
from .postproc import (PipelineConfig, pipeline_preset, read_pipeline_config,
                       run_pipeline)
from .train import (TrainSchedule, finetune_head, grad_check, read_schedule,
                    sample_patches, train)
from .util import atomic_write_text, standardize_image

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STAGE = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

STAGE_NAMES = ("cbca1", "sgm", "cbca2", "subpixel", "median", "bilateral",
               "lrcheck")
PROFILE_COSTS = ("sad", "census", "pixel", "net")


class CommandFailure(Exception):
    """Carries the exit code and the message printed to stderr."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _require_file(path: str, label: str) -> str:
    if not os.path.isfile(path):
        raise CommandFailure(EXIT_USAGE, f"{label}: not found: {path}")
    return path


def _load(fn, label: str):
    """Run an input-reading callable; any failure means unusable inputs."""
    try:
        return fn()
    except CommandFailure:
        raise
    except (Stereo4PError, OSError, ValueError) as exc:
        raise CommandFailure(EXIT_USAGE, f"{label}: {exc}")


def _compute(fn, label: str):
    """Run a compute stage; map library errors onto the exit-code contract."""
    try:
        return fn()
    except CommandFailure:
        raise
    except TrainingDivergedError as exc:
        raise CommandFailure(EXIT_DIVERGED, f"{label}: {exc}")
    except ShapeError as exc:
        # Shape mismatches at this point mean the inputs never fit together.
        raise CommandFailure(EXIT_USAGE, f"{label}: {exc}")
    except Stereo4PError as exc:
        raise CommandFailure(EXIT_STAGE, f"stage {label}: {exc}")


def _write(fn, label: str):
    try:
        return fn()
    except CommandFailure:
        raise
    except (OSError, Stereo4PError) as exc:
        raise CommandFailure(EXIT_IO, f"writing {label}: {exc}")


def _resolve_threads(value: Optional[int]) -> int:
    if value is None:
        return os.cpu_count() or 1
    if value < 1:
        raise CommandFailure(EXIT_USAGE, f"threads: must be >= 1, got {value}")
    return value


def _ensure_outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CommandFailure(EXIT_IO, f"out: cannot create {path}: {exc}")
    return path


# ---------------------------------------------------------------------------
# match
# ---------------------------------------------------------------------------


def _network_from_args(args) -> Tuple[NetworkSpec, Weights]:
    _require_file(args.weights, "weights")
    weights = _load(lambda: load_weights(args.weights), "weights")
    spec = weights.spec
    if args.config:
        _require_file(args.config, "config")
        given = _load(lambda: read_spec(args.config), "config")
        if spec_to_kv(given) != spec_to_kv(spec):
            raise CommandFailure(
                EXIT_USAGE, "config: network config does not match the weights file")
    return spec, weights


def _pipeline_from_args(args) -> PipelineConfig:
    if args.pipeline_config:
        _require_file(args.pipeline_config, "pipeline-config")
        cfg = _load(lambda: read_pipeline_config(args.pipeline_config),
                    "pipeline-config")
    else:
        cfg = _load(lambda: pipeline_preset(args.pipeline_preset),
                    "pipeline-preset")
    return _apply_stages(cfg, args.stages)


def _apply_stages(cfg: PipelineConfig, stages: Optional[str]) -> PipelineConfig:
    """Reduce the configured pipeline to the requested stage subset.

    "full" (or omitted) keeps the configuration as read; "none" disables
    every stage so the output is the raw winner-takes-all map; a comma list
    enables exactly the named stages. A cbca or median stage named
    explicitly runs at least once even if the config file zeroed it.
    """
    if stages in (None, "full"):
        return cfg
    names: set = set()
    if stages != "none":
        names = {part.strip() for part in stages.split(",") if part.strip()}
        unknown = names - set(STAGE_NAMES)
        if unknown:
            raise CommandFailure(
                EXIT_USAGE,
                f"stages: unknown {sorted(unknown)}; choose from "
                f"{', '.join(STAGE_NAMES)}, full, none")
    cfg.cbca.iterations_1 = max(cfg.cbca.iterations_1, 1) if "cbca1" in names else 0
    cfg.cbca.iterations_2 = max(cfg.cbca.iterations_2, 1) if "cbca2" in names else 0
    cfg.sgm_enabled = "sgm" in names
    cfg.subpixel_enabled = "subpixel" in names
    cfg.median_radius = max(cfg.median_radius, 1) if "median" in names else 0
    cfg.bilateral_enabled = "bilateral" in names
    cfg.lr_check_enabled = "lrcheck" in names
    return cfg


def _fill_invalid(disp: np.ndarray) -> np.ndarray:
    """Replace invalid pixels with the value of the nearest valid pixel.

    Output maps must be dense and finite; the rim the matcher cannot reach
    and any pixels a consistency check rejected borrow the nearest decided
    disparity (exact euclidean nearest, deterministic).
    """
    disp = np.asarray(disp, dtype=np.float32)
    bad = ~np.isfinite(disp)
    if not bad.any():
        return disp.copy()
    if bad.all():
        raise DataError("disparity map has no valid pixels to fill from")
    from scipy import ndimage

    idx = ndimage.distance_transform_edt(bad, return_distances=False,
                                         return_indices=True)
    return disp[tuple(idx)]


def cmd_match(args) -> int:
    left_path = _require_file(args.left, "left image")
    right_path = _require_file(args.right, "right image")
    left = _load(lambda: dataio.read_image(left_path), "left image")
    right = _load(lambda: dataio.read_image(right_path), "right image")
    if left.shape != right.shape:
        raise CommandFailure(
            EXIT_USAGE, f"images: shapes differ, {left.shape} vs {right.shape}")
    spec, weights = _network_from_args(args)
    cfg = _pipeline_from_args(args)
    if args.ndisp is not None:
        ndisp = args.ndisp
    else:
        _require_file(args.calib, "calib")
        ndisp = _load(lambda: dataio.read_calib(args.calib), "calib").ndisp
    if ndisp < 1:
        raise CommandFailure(EXIT_USAGE, f"ndisp: must be >= 1, got {ndisp}")
    threads = _resolve_threads(args.threads)
    outdir = _ensure_outdir(args.out)

    timings: List[Tuple[str, float]] = []
    t0 = time.perf_counter()
    volume = _compute(
        lambda: compute_cost_volume(left, right, ndisp, spec, weights,
                                    threads=threads),
        "cost-volume")
    timings.append(("cost_volume", time.perf_counter() - t0))

    t0 = time.perf_counter()
    result = _compute(
        lambda: run_pipeline(volume, (left, right), cfg, threads=threads),
        "postproc")
    timings.extend(result.timings)

    t0 = time.perf_counter()
    raw_map = _compute(lambda: _fill_invalid(result.raw_wta), "fill")
    final_map = _compute(lambda: _fill_invalid(result.disparity), "fill")
    timings.append(("fill", time.perf_counter() - t0))
    if not (np.isfinite(raw_map).all() and np.isfinite(final_map).all()):
        raise CommandFailure(EXIT_STAGE, "stage fill: non-finite disparities remain")

    paths = {
        "disp.pfm": lambda p: dataio.write_pfm(final_map, p),
        "disp_raw.pfm": lambda p: dataio.write_pfm(raw_map, p),
        "disp.png": lambda p: dataio.save_disparity_render(final_map, ndisp, p),
        "disp_raw.png": lambda p: dataio.save_disparity_render(raw_map, ndisp, p),
    }
    for name, writer in paths.items():
        target = os.path.join(outdir, name)
        _write(lambda w=writer, t=target: w(t), name)
    total = sum(seconds for _, seconds in timings)
    timings.append(("total", total))
    _write(lambda: dataio.write_csv(os.path.join(outdir, "timings.csv"),
                                    ["stage", "seconds"],
                                    [(n, f"{s:.6f}") for n, s in timings]),
           "timings.csv")

    for name, seconds in timings:
        print(f"{name}: {seconds * 1000:.1f} ms")
    print(f"wrote {outdir}/disp.pfm ({final_map.shape[1]}x{final_map.shape[0]}, "
          f"ndisp {ndisp}, threads {threads})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / finetune
# ---------------------------------------------------------------------------


def _spec_from_args(args) -> NetworkSpec:
    if args.config:
        _require_file(args.config, "config")
        return _load(lambda: read_spec(args.config), "config")
    return _load(lambda: spec_preset(args.preset), "preset")


def _schedule_from_args(args) -> TrainSchedule:
    if args.schedule:
        _require_file(args.schedule, "schedule")
        schedule = _load(lambda: read_schedule(args.schedule), "schedule")
    else:
        schedule = TrainSchedule()
    if args.seed is not None:
        schedule.seed = args.seed
    return _load(schedule.validate, "schedule")


def _collect_sample_dirs(paths: Sequence[str]) -> List[str]:
    """Accept sample directories directly or a parent holding several."""
    dirs: List[str] = []
    for path in paths:
        if not os.path.isdir(path):
            raise CommandFailure(EXIT_USAGE, f"dataset: not found: {path}")
        if os.path.isfile(os.path.join(path, "calib.txt")):
            dirs.append(path)
            continue
        children = sorted(
            name for name in os.listdir(path)
            if os.path.isfile(os.path.join(path, name, "calib.txt")))
        if not children:
            raise CommandFailure(
                EXIT_USAGE, f"dataset: no sample directories under {path}")
        dirs.extend(os.path.join(path, name) for name in children)
    return dirs


def _load_patches(args) -> List:
    sample_dirs = _collect_sample_dirs(args.data)
    samples = [_load(lambda d=d: dataio.load_sample(d), d) for d in sample_dirs]
    return _load(
        lambda: sample_patches(samples, args.samples, seed=args.sample_seed,
                               jitter=args.jitter, neg_min=args.neg_min,
                               neg_max=args.neg_max),
        "patch sampling")


def _write_training_outputs(result, outdir: str) -> None:
    _write(lambda: save_weights(result.weights,
                                os.path.join(outdir, "weights.bin")),
           "weights.bin")
    _write(lambda: result.write_loss_csv(os.path.join(outdir, "loss.csv")),
           "loss.csv")


def _print_training_summary(result, outdir: str) -> None:
    losses = result.epoch_mean_loss
    for epoch, mean in enumerate(losses, start=1):
        print(f"epoch {epoch}: mean loss {mean:.6f}")
    print(f"wrote {outdir}/weights.bin and {outdir}/loss.csv")


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    schedule = _schedule_from_args(args)
    patches = _load_patches(args)
    outdir = _ensure_outdir(args.out)
    result = _compute(lambda: train(spec, patches, schedule), "training")
    _write_training_outputs(result, outdir)
    _print_training_summary(result, outdir)
    return EXIT_OK


def cmd_finetune(args) -> int:
    spec = _spec_from_args(args)
    schedule = _schedule_from_args(args)
    _require_file(args.weights, "weights")
    pretrained = _load(lambda: load_weights(args.weights), "weights")
    patches = _load_patches(args)
    outdir = _ensure_outdir(args.out)
    result = _compute(lambda: finetune_head(pretrained, spec, patches, schedule),
                      "finetune")
    _write_training_outputs(result, outdir)
    _print_training_summary(result, outdir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    if len(args.disp) != len(args.gt):
        raise CommandFailure(
            EXIT_USAGE,
            f"eval: {len(args.disp)} disparity maps but {len(args.gt)} ground truths")
    names = args.names
    if names is None:
        names = [os.path.splitext(os.path.basename(p))[0] for p in args.disp]
    if len(names) != len(args.disp):
        raise CommandFailure(
            EXIT_USAGE, f"eval: {len(names)} names for {len(args.disp)} maps")
    for path in list(args.disp) + list(args.gt):
        _require_file(path, "map")
    table: Optional[Dict[str, float]] = None
    if args.sample_weights:
        _require_file(args.sample_weights, "sample-weights")
        table = _load(lambda: dataio.read_weights_table(args.sample_weights),
                      "sample-weights")

    rows: List[Tuple[str, float, float]] = []
    for name, disp_path, gt_path in zip(names, args.disp, args.gt):
        disp = _load(lambda p=disp_path: dataio.read_pfm(p), disp_path)
        gt = _load(lambda p=gt_path: dataio.read_pfm(p), gt_path)
        if table is not None:
            if name not in table:
                raise CommandFailure(
                    EXIT_USAGE, f"sample-weights: no weight for {name!r}")
            weight = table[name]
        else:
            weight = 1.0
        error = _compute(
            lambda d=disp, g=gt: dataio.bad_pixel_error(d, g, args.threshold),
            f"metric {name}")
        rows.append((name, error, weight))
        print(f"{name}: bad-{args.threshold:g} {error:.4f}% (weight {weight:g})")

    average = _compute(
        lambda: dataio.weighted_average([r[1] for r in rows],
                                        [r[2] for r in rows]),
        "weighted average")
    print(f"weighted average: {average:.4f}%")
    if args.out:
        outdir = _ensure_outdir(args.out)
        _write(lambda: dataio.write_metrics_csv(
            os.path.join(outdir, "metrics.csv"), rows), "metrics.csv")
        _write(lambda: atomic_write_text(
            os.path.join(outdir, "average.txt"), f"{average:.6f}\n"),
            "average.txt")
        print(f"wrote {outdir}/metrics.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------


def _parse_pixel(text: str) -> Tuple[int, int]:
    try:
        y_text, x_text = text.split(",")
        return int(y_text), int(x_text)
    except ValueError:
        raise CommandFailure(EXIT_USAGE, f"pixel: expected 'y,x', got {text!r}")


def _net_profile(left_std, right_std, y: int, x: int, ndisp: int,
                 spec: NetworkSpec, weights: Weights) -> np.ndarray:
    """Matching cost of the trained net over all disparities at one pixel.

    Disparities whose right patch would leave the frame get the invalid
    sentinel, like the classical costs.
    """
    margin = spec.total_patch // 2
    h, w = left_std.shape
    if not (margin <= y < h - margin and margin <= x < w - margin):
        raise ShapeError(
            f"pixel ({y}, {x}) leaves no room for a {spec.total_patch}px patch")
    lp = np.ascontiguousarray(left_std[y - margin:y + margin + 1,
                                       x - margin:x + margin + 1])
    raw = np.empty(ndisp, dtype=np.float64)
    for d in range(ndisp):
        xr = x - d
        if xr - margin < 0:
            raw[d] = costs_mod.COST_SENTINEL
            continue
        rp = np.ascontiguousarray(right_std[y - margin:y + margin + 1,
                                            xr - margin:xr + margin + 1])
        raw[d] = 1.0 - score_pair(lp, rp, spec, weights)
    return raw


def cmd_profile(args) -> int:
    left_path = _require_file(args.left, "left image")
    right_path = _require_file(args.right, "right image")
    left = _load(lambda: dataio.read_image(left_path), "left image")
    right = _load(lambda: dataio.read_image(right_path), "right image")
    if left.shape != right.shape:
        raise CommandFailure(
            EXIT_USAGE, f"images: shapes differ, {left.shape} vs {right.shape}")
    if not args.pixel:
        raise CommandFailure(EXIT_USAGE, "profile: at least one --pixel required")
    pixels = [_parse_pixel(p) for p in args.pixel]
    cost_names = [part.strip() for part in args.costs.split(",") if part.strip()]
    unknown = set(cost_names) - set(PROFILE_COSTS)
    if unknown:
        raise CommandFailure(
            EXIT_USAGE,
            f"costs: unknown {sorted(unknown)}; choose from {', '.join(PROFILE_COSTS)}")
    spec = weights = None
    if "net" in cost_names:
        if not args.weights:
            raise CommandFailure(EXIT_USAGE,
                                 "costs: 'net' needs --weights with a trained net")
        spec, weights = _network_from_args(args)
    window = args.window

    def classic(fn):
        return lambda lf, rt, y, x, d: fn(lf, rt, window, y, x, d)

    fns = {
        "sad": classic(costs_mod.sad_cost),
        "census": classic(costs_mod.census_cost),
        "pixel": costs_mod.pixelwise_cost,
    }
    left_std = standardize_image(left)
    right_std = standardize_image(right)

    rows = []
    for (y, x) in pixels:
        for name in cost_names:
            if name == "net":
                raw = _compute(
                    lambda yy=y, xx=x: _net_profile(left_std, right_std, yy, xx,
                                                    args.ndisp, spec, weights),
                    f"net profile ({y},{x})")
                values = costs_mod.normalize_profile(raw)
            else:
                profile = _compute(
                    lambda n=name, yy=y, xx=x: costs_mod.cost_profile(
                        fns[n], (left, right), yy, xx, args.ndisp),
                    f"{name} profile ({y},{x})")
                values, raw = profile.costs, profile.raw
            best = int(np.argmin(np.where(raw < costs_mod.COST_SENTINEL, raw,
                                          np.inf)))
            print(f"pixel ({y},{x}) {name}: argmin d={best}")
            rows.extend((y, x, name, d, f"{values[d]:.6f}", f"{raw[d]:.6g}")
                        for d in range(args.ndisp))

    outdir = _ensure_outdir(args.out)
    _write(lambda: dataio.write_csv(os.path.join(outdir, "profiles.csv"),
                                    ["y", "x", "cost", "d", "value", "raw"],
                                    rows), "profiles.csv")
    print(f"wrote {outdir}/profiles.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    spec = _spec_from_args(args)
    report = _compute(
        lambda: grad_check(spec, seed=args.seed if args.seed is not None
                           else 20240817,
                           points_per_layer=args.points, epsilon=args.epsilon),
        "gradient check")
    print(report.format())
    if args.out:
        outdir = _ensure_outdir(args.out)
        _write(lambda: atomic_write_text(os.path.join(outdir, "gradcheck.txt"),
                                         report.format() + "\n"),
               "gradcheck.txt")
    if report.max_rel_err >= args.tolerance:
        raise CommandFailure(
            EXIT_STAGE,
            f"gradient check failed: max relative error {report.max_rel_err:.3e}"
            f" >= {args.tolerance:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereo4p",
        description="Stereo matching with learned and classical costs.")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="compute a disparity map for one pair")
    m.add_argument("left", help="left image (PGM or PNG)")
    m.add_argument("right", help="right image")
    m.add_argument("--config", help="network description file (checked "
                                    "against the weights)")
    m.add_argument("--weights", required=True, help="trained weights file")
    group = m.add_mutually_exclusive_group(required=True)
    group.add_argument("--calib", help="calib.txt supplying ndisp")
    group.add_argument("--ndisp", type=int, help="disparity range")
    m.add_argument("--pipeline-config", help="post-processing parameter file")
    m.add_argument("--pipeline-preset", default="wide",
                   help="named post-processing preset (default wide)")
    m.add_argument("--stages", help="'full', 'none', or comma list of "
                                    f"{', '.join(STAGE_NAMES)}")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--seed", type=int,
                   help="accepted for interface uniformity; matching is "
                        "deterministic")
    m.add_argument("--threads", type=int,
                   help="worker threads (default: all cores)")
    m.add_argument("--deterministic", action="store_true",
                   help="assert thread-count-invariant schedules (always on)")
    m.set_defaults(func=cmd_match)

    for name, handler in (("train", cmd_train), ("finetune", cmd_finetune)):
        t = sub.add_parser(name, help=f"{name} a matching network")
        t.add_argument("data", nargs="+",
                       help="sample directories (im0/im1, calib.txt, "
                            "disp0GT.pfm), or a parent directory of them")
        t.add_argument("--config", help="network description file")
        t.add_argument("--preset",
                       default="narrow-tiny" if name == "train" else "wide-tiny",
                       help="named network preset")
        if name == "finetune":
            t.add_argument("--weights", required=True,
                           help="weights whose trunk is kept frozen")
        t.add_argument("--schedule", help="training schedule file")
        t.add_argument("--samples", type=int, default=2048,
                       help="patch pairs to draw (default 2048)")
        t.add_argument("--sample-seed", type=int, default=0,
                       help="seed for patch sampling (default 0)")
        t.add_argument("--jitter", type=int, default=1)
        t.add_argument("--neg-min", type=int, default=2)
        t.add_argument("--neg-max", type=int, default=8)
        t.add_argument("--out", required=True, help="output directory")
        t.add_argument("--seed", type=int, help="overrides the schedule seed")
        t.add_argument("--threads", type=int,
                       help="accepted for interface uniformity; training is "
                            "sequential for reproducibility")
        t.set_defaults(func=handler)

    e = sub.add_parser("eval", help="score disparity maps against ground truth")
    e.add_argument("--disp", nargs="+", required=True, help="computed maps")
    e.add_argument("--gt", nargs="+", required=True, help="ground-truth maps")
    e.add_argument("--names", nargs="+", help="sample names (default: file stems)")
    e.add_argument("--sample-weights", help="'name weight' table file")
    e.add_argument("--threshold", type=float, default=2.0,
                   help="bad-pixel threshold (default 2.0)")
    e.add_argument("--out", help="directory for metrics.csv")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile",
                       help="matching-cost profiles over disparity at pixels")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--pixel", action="append",
                   help="'y,x' position; repeatable")
    p.add_argument("--ndisp", type=int, required=True)
    p.add_argument("--window", type=int, default=9,
                   help="window for sad/census (default 9)")
    p.add_argument("--costs", default="sad,census,pixel",
                   help=f"comma list from {', '.join(PROFILE_COSTS)}")
    p.add_argument("--config", help="network description file")
    p.add_argument("--weights", help="trained weights for the 'net' cost")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_profile)

    g = sub.add_parser("gradcheck",
                       help="compare analytic and numeric gradients")
    g.add_argument("--config", help="network description file")
    g.add_argument("--preset", default="narrow-tiny",
                   help="named network preset (default narrow-tiny)")
    g.add_argument("--seed", type=int, help="probe seed")
    g.add_argument("--points", type=int, default=4,
                   help="points per layer (default 4)")
    g.add_argument("--epsilon", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-3,
                   help="max relative error allowed (default 1e-3)")
    g.add_argument("--out", help="directory for the report file")
    g.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandFailure as failure:
        print(f"error: {failure.message}", file=sys.stderr)
        return failure.code


if __name__ == "__main__":
    sys.exit(main())
