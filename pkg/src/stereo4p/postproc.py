"""Cost-volume post-processing: cross-based cost aggregation, semi-global
matching, winner-takes-all selection, subpixel refinement, and disparity-map
filtering, assembled into a configurable pipeline.

Cost volumes are float32 arrays of shape (H, W, D); disparity maps are float32
arrays of shape (H, W) with NaN marking invalid pixels. Guide images are 2-D
grayscale arrays scaled to [0, 1].
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import config as kv
from .errors import ConfigError, ShapeError
from .util import COST_SENTINEL, parallel_map, standardize_image

DIRECTIONS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
DIRECTIONS_8 = DIRECTIONS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass
class SgmParams:
    """Scanline smoothing penalties.

    P1 penalizes one-step disparity changes, P2 larger jumps. At intensity
    edges the penalties are relaxed: divided by Q1 when exactly one image has
    a step above V along the scan direction, by Q2 when both do.
    """

    P1: float = 1.3
    P2: float = 17.0
    Q1: float = 3.6
    Q2: float = 36.0
    V: float = 1.4

    def validate(self) -> "SgmParams":
        if not (self.P2 > self.P1 > 0):
            raise ConfigError(f"need P2 > P1 > 0, got P1={self.P1}, P2={self.P2}")
        if self.Q1 < 1 or self.Q2 < 1:
            raise ConfigError(f"need Q1, Q2 >= 1, got Q1={self.Q1}, Q2={self.Q2}")
        if self.V <= 0:
            raise ConfigError(f"need V > 0, got V={self.V}")
        return self


@dataclass
class CbcaParams:
    """Cross-arm growth and aggregation controls."""

    intensity_threshold: float = 0.02
    max_arm: int = 14
    iterations_1: int = 0
    iterations_2: int = 1

    def validate(self) -> "CbcaParams":
        if self.max_arm < 1:
            raise ConfigError(f"need max_arm >= 1, got {self.max_arm}")
        if self.iterations_1 < 0 or self.iterations_2 < 0:
            raise ConfigError("iteration counts must be >= 0")
        return self


def _check_volume(volume) -> np.ndarray:
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ShapeError(f"cost volume must be (H, W, D), got {volume.shape}")
    return volume


def _check_guide(guide, volume_shape) -> np.ndarray:
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim != 2:
        raise ShapeError(f"guide image must be 2-D, got {guide.shape}")
    if guide.shape != volume_shape[:2]:
        raise ShapeError(
            f"guide shape {guide.shape} does not match volume {volume_shape[:2]}")
    return guide


def _guide_pair(images, volume_shape) -> Tuple[np.ndarray, np.ndarray]:
    """Accept (left, right) or a single image used for both views."""
    if isinstance(images, (tuple, list)) and len(images) == 2:
        left, right = images
    else:
        left = right = images
    return _check_guide(left, volume_shape), _check_guide(right, volume_shape)


# ---------------------------------------------------------------------------
# Cross-based cost aggregation


def cross_arms(guide: np.ndarray, params: CbcaParams) -> np.ndarray:
    """Arm lengths (left, right, up, down) per pixel.

    Each arm extends while the candidate pixel stays inside the image and its
    intensity differs from the anchor pixel by less than the threshold, up to
    max_arm pixels.
    """
    guide = np.asarray(guide, dtype=np.float64)
    h, w = guide.shape
    arms = np.zeros((h, w, 4), dtype=np.int64)
    for k, (dy, dx) in enumerate([(0, -1), (0, 1), (-1, 0), (1, 0)]):
        alive = np.ones((h, w), dtype=bool)
        for n in range(1, params.max_arm + 1):
            oy, ox = dy * n, dx * n
            if abs(oy) >= h or abs(ox) >= w:
                break
            shifted = np.full((h, w), np.inf)
            dst = (slice(max(0, -oy), h - max(0, oy)),
                   slice(max(0, -ox), w - max(0, ox)))
            src = (slice(max(0, oy), h - max(0, -oy)),
                   slice(max(0, ox), w - max(0, -ox)))
            shifted[dst] = guide[src]
            alive &= np.abs(shifted - guide) < params.intensity_threshold
            if not alive.any():
                break
            arms[:, :, k] += alive
    return arms


def _cbca_pass(volume: np.ndarray, arms: np.ndarray,
               valid: np.ndarray) -> np.ndarray:
    """One aggregation pass: average costs over each pixel's cross union.

    The support of pixel p is the union, over pixels q on p's vertical arm,
    of q's horizontal arm. Computed with two cumulative sums: horizontal arm
    sums per pixel, then vertical accumulation of those sums. Entries flagged
    invalid contribute nothing and stay at the sentinel; a valid entry always
    counts itself, so its average is over at least one cost.
    """
    h, w, nd = volume.shape
    left_a, right_a, up_a, down_a = (arms[:, :, k] for k in range(4))
    xs = np.arange(w)[None, :]
    ys = np.arange(h)[:, None]

    vol = np.where(valid, volume, 0.0).astype(np.float64)
    cnt = valid.astype(np.float64)
    csum_x = np.concatenate(
        [np.zeros((h, 1, nd)), np.cumsum(vol, axis=1)], axis=1)
    ccnt_x = np.concatenate(
        [np.zeros((h, 1, nd)), np.cumsum(cnt, axis=1)], axis=1)
    x_hi = xs + right_a + 1
    x_lo = xs - left_a
    row_sum = csum_x[ys, x_hi, :] - csum_x[ys, x_lo, :]
    row_cnt = ccnt_x[ys, x_hi, :] - ccnt_x[ys, x_lo, :]

    csum_y = np.concatenate(
        [np.zeros((1, w, nd)), np.cumsum(row_sum, axis=0)], axis=0)
    ccnt_y = np.concatenate(
        [np.zeros((1, w, nd)), np.cumsum(row_cnt, axis=0)], axis=0)
    y_hi = ys + down_a + 1
    y_lo = ys - up_a
    total = csum_y[y_hi, xs, :] - csum_y[y_lo, xs, :]
    count = ccnt_y[y_hi, xs, :] - ccnt_y[y_lo, xs, :]
    out = np.full((h, w, nd), float(COST_SENTINEL))
    np.divide(total, count, out=out, where=valid & (count > 0))
    return out


def cbca(volume, guide, params: CbcaParams, iterations: int) -> np.ndarray:
    """Aggregate costs over intensity-adaptive cross supports, `iterations`
    times. Zero iterations returns the volume unchanged.

    Sentinel entries mark match hypotheses that do not exist (the right-image
    pixel would fall outside the frame), so they are excluded from every
    average and come out of each pass still at the sentinel.
    """
    volume = _check_volume(volume)
    params.validate()
    if iterations < 0:
        raise ConfigError(f"iterations must be >= 0, got {iterations}")
    if iterations == 0:
        return volume.copy()
    guide = _check_guide(guide, volume.shape)
    arms = cross_arms(guide, params)
    out = volume.astype(np.float64)
    valid = out < float(COST_SENTINEL)
    for _ in range(iterations):
        out = _cbca_pass(out, arms, valid)
    return np.minimum(out, COST_SENTINEL).astype(np.float32)


# ---------------------------------------------------------------------------
# Semi-global matching


def _edge_penalties(d1, d2, params: SgmParams):
    """Per-hypothesis penalties after gradient adaptation.

    d1 is the intensity step in the first image (scalar per pixel), d2 the
    per-disparity steps in the second image.
    """
    both = (d1 >= params.V) & (d2 >= params.V)
    one = ((d1 >= params.V) | (d2 >= params.V)) & ~both
    p1 = np.where(both, params.P1 / params.Q2,
                  np.where(one, params.P1 / params.Q1, params.P1))
    p2 = np.where(both, params.P2 / params.Q2,
                  np.where(one, params.P2 / params.Q1, params.P2))
    return p1, p2


def _relax(prev: np.ndarray, vol_slice: np.ndarray, p1, p2) -> np.ndarray:
    """One recurrence step over a batch of scanlines (..., D) -> (..., D)."""
    minprev = prev.min(axis=-1)
    cand = prev.copy()
    cand[..., 1:] = np.minimum(cand[..., 1:], prev[..., :-1] + p1[..., 1:])
    cand[..., :-1] = np.minimum(cand[..., :-1], prev[..., 1:] + p1[..., :-1])
    cand = np.minimum(cand, minprev[..., None] + p2)
    return (vol_slice + cand) - minprev[..., None]


def sgm_direction(volume, left, right, params: SgmParams, direction) -> np.ndarray:
    """Scanline dynamic programming along one direction, float64 output.

    out(p, d) = cost(p, d) + min(prev(d), prev(d±1) + P1, min_k prev(k) + P2)
                - min_k prev(k)
    where prev is the already-relaxed predecessor p - direction; pixels whose
    predecessor falls outside the image copy their raw costs. Penalties are
    adapted per pixel and disparity from intensity steps in both images, with
    out-of-image samples clamped to the border.
    """
    volume = _check_volume(volume)
    left = _check_guide(left, volume.shape)
    right = _check_guide(right, volume.shape)
    params.validate()
    h, w, nd = volume.shape
    dy, dx = direction
    vol = volume.astype(np.float64)
    out = np.empty((h, w, nd), dtype=np.float64)
    ds = np.arange(nd)

    if dy == 0 and dx != 0:
        xs_order = range(w) if dx > 0 else range(w - 1, -1, -1)
        for x in xs_order:
            px = x - dx
            if not (0 <= px < w):
                out[:, x, :] = vol[:, x, :]
                continue
            d1 = np.abs(left[:, x] - left[:, px])[:, None]
            xr = np.clip(x - ds, 0, w - 1)
            xrp = np.clip(x - ds - dx, 0, w - 1)
            d2 = np.abs(right[:, xr] - right[:, xrp])
            p1, p2 = _edge_penalties(d1, d2, params)
            out[:, x, :] = _relax(out[:, px, :], vol[:, x, :], p1, p2)
        return out

    if dy != 0:
        xs = np.arange(w)
        xr_grid = np.clip(xs[:, None] - ds[None, :], 0, w - 1)
        xrp_grid = np.clip(xs[:, None] - ds[None, :] - dx, 0, w - 1)
        interior = (xs - dx >= 0) & (xs - dx < w)
        px_idx = np.clip(xs - dx, 0, w - 1)
        ys_order = range(h) if dy > 0 else range(h - 1, -1, -1)
        for y in ys_order:
            py = y - dy
            if not (0 <= py < h):
                out[y, :, :] = vol[y, :, :]
                continue
            d1 = np.abs(left[y, :] - left[py, px_idx])[:, None]
            yrp = min(max(y - dy, 0), h - 1)
            d2 = np.abs(right[y, xr_grid] - right[yrp, xrp_grid])
            p1, p2 = _edge_penalties(d1, d2, params)
            relaxed = _relax(out[py, px_idx, :], vol[y, :, :], p1, p2)
            out[y, :, :] = np.where(interior[:, None], relaxed, vol[y, :, :])
        return out

    raise ConfigError(f"direction must be a nonzero unit step, got {direction}")


def sgm(volume, images, params: SgmParams, num_directions: int = 4,
        threads: int = 1) -> np.ndarray:
    """Sum of per-direction scanline relaxations, rescaled by the direction
    count. `images` is (left, right) or one image reused for both views."""
    volume = _check_volume(volume)
    left, right = _guide_pair(images, volume.shape)
    params.validate()
    if num_directions == 4:
        directions = DIRECTIONS_4
    elif num_directions == 8:
        directions = DIRECTIONS_8
    else:
        raise ConfigError(f"num_directions must be 4 or 8, got {num_directions}")

    parts = parallel_map(
        lambda direction: sgm_direction(volume, left, right, params, direction),
        directions, threads=threads)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    total /= len(directions)
    return np.minimum(total, COST_SENTINEL).astype(np.float32)


# ---------------------------------------------------------------------------
# Disparity selection and refinement


def wta(volume) -> np.ndarray:
    """Per-pixel argmin over disparity; ties go to the smaller disparity.
    Pixels whose every hypothesis is the invalid sentinel become NaN."""
    volume = _check_volume(volume)
    disp = np.argmin(volume, axis=2).astype(np.float32)
    all_invalid = volume.min(axis=2) >= COST_SENTINEL
    disp[all_invalid] = np.nan
    return disp


def subpixel_refine(volume, disp) -> np.ndarray:
    """Parabola fit through the costs at (d-1, d, d+1).

    offset = (c(d-1) - c(d+1)) / (2 (c(d-1) + c(d+1) - 2 c(d))), clamped to
    [-0.5, 0.5]. Boundary disparities, non-convex triples, and triples that
    touch the invalid sentinel are left unrefined.
    """
    volume = _check_volume(volume)
    disp = np.asarray(disp, dtype=np.float32)
    if disp.shape != volume.shape[:2]:
        raise ShapeError(f"disparity shape {disp.shape} does not match volume")
    h, w, nd = volume.shape
    out = disp.copy()
    valid = np.isfinite(disp)
    d_int = np.zeros(disp.shape, dtype=np.int64)
    d_int[valid] = np.rint(disp[valid]).astype(np.int64)
    interior = valid & (d_int > 0) & (d_int < nd - 1)
    if not interior.any():
        return out
    ys, xs = np.nonzero(interior)
    d0 = d_int[ys, xs]
    c_minus = volume[ys, xs, d0 - 1].astype(np.float64)
    c_center = volume[ys, xs, d0].astype(np.float64)
    c_plus = volume[ys, xs, d0 + 1].astype(np.float64)
    denom = c_minus + c_plus - 2.0 * c_center
    usable = (denom > 0) & (c_minus < COST_SENTINEL) & (c_plus < COST_SENTINEL)
    offset = np.zeros_like(denom)
    np.divide(c_minus - c_plus, 2.0 * denom, out=offset, where=usable)
    offset = np.clip(offset, -0.5, 0.5)
    out[ys, xs] = (d0 + offset).astype(np.float32)
    return out


def median_filter(disp, radius: int) -> np.ndarray:
    """Median over the clipped window, NaN pixels excluded. A pixel whose
    window contains any finite value gets that median, so isolated invalid
    pixels are filled; all-invalid windows stay NaN."""
    disp = np.asarray(disp, dtype=np.float32)
    if disp.ndim != 2:
        raise ShapeError(f"disparity map must be 2-D, got {disp.shape}")
    if radius < 0:
        raise ConfigError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return disp.copy()
    padded = np.pad(disp.astype(np.float64), radius, constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (2 * radius + 1, 2 * radius + 1))
    flat = windows.reshape(disp.shape[0], disp.shape[1], -1)
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=RuntimeWarning)
            out = np.nanmedian(flat, axis=2)
    return out.astype(np.float32)


def bilateral_filter(disp, guide, sigma_spatial: float = 2.0,
                     sigma_range: float = 0.1, radius: int | None = None) -> np.ndarray:
    """Edge-preserving smoothing: Gaussian weights in space and in guide
    intensity difference. Invalid pixels neither contribute nor get filled."""
    disp = np.asarray(disp, dtype=np.float64)
    if disp.ndim != 2:
        raise ShapeError(f"disparity map must be 2-D, got {disp.shape}")
    guide = _check_guide(guide, disp.shape + (0,))
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise ConfigError("bilateral sigmas must be positive")
    if radius is None:
        radius = int(np.ceil(2.5 * sigma_spatial))
    h, w = disp.shape
    finite = np.isfinite(disp)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            src_ys = slice(max(0, -dy), h + min(0, -dy))
            src_xs = slice(max(0, -dx), w + min(0, -dx))
            nbr_disp = disp[ys, xs]
            nbr_ok = finite[ys, xs]
            spatial = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_spatial ** 2))
            drange = guide[src_ys, src_xs] - guide[ys, xs]
            wgt = spatial * np.exp(-(drange * drange) / (2.0 * sigma_range ** 2))
            wgt = np.where(nbr_ok, wgt, 0.0)
            num[src_ys, src_xs] += wgt * np.where(nbr_ok, nbr_disp, 0.0)
            den[src_ys, src_xs] += wgt
    out = np.full((h, w), np.nan)
    ok = finite & (den > 0)
    out[ok] = num[ok] / den[ok]
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Left-right consistency (optional stage)


def left_right_check(volume, max_diff: float = 1.0) -> np.ndarray:
    """Invalidate pixels that disagree with the right view's selection.

    The right-centered volume is formed by reindexing the left-centered one
    (cost_right(y, x, d) = cost_left(y, x + d, d)); pixels where the two
    selections differ by more than max_diff become NaN, then holes are filled
    with the nearer of the nearest valid disparities on the same row.
    """
    volume = _check_volume(volume)
    h, w, nd = volume.shape
    disp_left = wta(volume)
    right_vol = np.full_like(volume, COST_SENTINEL)
    for d in range(nd):
        if d < w:
            right_vol[:, : w - d, d] = volume[:, d:, d]
    disp_right = wta(right_vol)

    out = disp_left.copy()
    ys, xs = np.mgrid[0:h, 0:w]
    dl = np.where(np.isfinite(disp_left), disp_left, 0).astype(np.int64)
    partner_x = np.clip(xs - dl, 0, w - 1)
    partner = disp_right[ys, partner_x]
    bad = ~np.isfinite(disp_left) | ~np.isfinite(partner) | (
        np.abs(disp_left - partner) > max_diff)
    out[bad] = np.nan

    for y in range(h):
        row = out[y]
        good = np.flatnonzero(np.isfinite(row))
        if good.size == 0:
            continue
        holes = np.flatnonzero(~np.isfinite(row))
        if holes.size == 0:
            continue
        left_idx = np.searchsorted(good, holes, side="right") - 1
        right_idx = np.clip(left_idx + 1, 0, good.size - 1)
        left_idx = np.clip(left_idx, 0, good.size - 1)
        cand_l = row[good[left_idx]]
        cand_r = row[good[right_idx]]
        row[holes] = np.minimum(cand_l, cand_r)
    return out


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class PipelineConfig:
    """Stage parameters and toggles for the full post-processing chain.

    Stage order: cbca (iterations_1) -> sgm -> cbca (iterations_2) -> wta ->
    subpixel -> median -> bilateral. With every stage disabled the result is
    the raw winner-takes-all map.
    """

    cbca: CbcaParams = field(default_factory=CbcaParams)
    sgm: SgmParams = field(default_factory=SgmParams)
    sgm_enabled: bool = True
    num_directions: int = 4
    subpixel_enabled: bool = True
    median_radius: int = 2
    bilateral_enabled: bool = True
    bilateral_sigma_spatial: float = 2.0
    bilateral_sigma_range: float = 0.1
    lr_check_enabled: bool = False
    lr_max_diff: float = 1.0

    def validate(self) -> "PipelineConfig":
        self.cbca.validate()
        self.sgm.validate()
        if self.num_directions not in (4, 8):
            raise ConfigError(f"num_directions must be 4 or 8, got {self.num_directions}")
        if self.median_radius < 0:
            raise ConfigError("median_radius must be >= 0")
        return self


def disabled_pipeline_config() -> PipelineConfig:
    """Everything off; run_pipeline degenerates to wta()."""
    return PipelineConfig(
        cbca=CbcaParams(iterations_1=0, iterations_2=0),
        sgm_enabled=False, subpixel_enabled=False, median_radius=0,
        bilateral_enabled=False, lr_check_enabled=False)


def wide_pipeline_config() -> PipelineConfig:
    """Tuned preset for cost volumes from the wide-receptive-field network:
    no pre-smoothing aggregation, a single post-smoothing aggregation pass,
    and mild scanline penalties."""
    return PipelineConfig(
        cbca=CbcaParams(intensity_threshold=0.02, max_arm=14,
                        iterations_1=0, iterations_2=1),
        sgm=SgmParams(P1=1.3, P2=17.0, Q1=3.6, Q2=36.0, V=1.4))


def narrow_pipeline_config() -> PipelineConfig:
    """Reconstructed preset for narrow-receptive-field cost volumes, with the
    heavier aggregation such volumes usually need. Values are a labeled
    reconstruction, not tuned numbers."""
    return PipelineConfig(
        cbca=CbcaParams(intensity_threshold=0.02, max_arm=14,
                        iterations_1=2, iterations_2=2),
        sgm=SgmParams(P1=2.3, P2=55.8, Q1=4.0, Q2=8.0, V=1.5))


PIPELINE_PRESETS = {
    "wide": wide_pipeline_config,
    "narrow": narrow_pipeline_config,
    "off": disabled_pipeline_config,
}


def pipeline_config_to_kv(cfg: PipelineConfig) -> dict:
    return {
        "cbca_intensity": repr(cfg.cbca.intensity_threshold),
        "cbca_max_arm": str(cfg.cbca.max_arm),
        "cbca_num_iterations_1": str(cfg.cbca.iterations_1),
        "cbca_num_iterations_2": str(cfg.cbca.iterations_2),
        "sgm_P1": repr(cfg.sgm.P1),
        "sgm_P2": repr(cfg.sgm.P2),
        "sgm_Q1": repr(cfg.sgm.Q1),
        "sgm_Q2": repr(cfg.sgm.Q2),
        "sgm_V": repr(cfg.sgm.V),
        "sgm_enabled": str(cfg.sgm_enabled).lower(),
        "num_directions": str(cfg.num_directions),
        "subpixel_enabled": str(cfg.subpixel_enabled).lower(),
        "median_radius": str(cfg.median_radius),
        "bilateral_enabled": str(cfg.bilateral_enabled).lower(),
        "bilateral_sigma_spatial": repr(cfg.bilateral_sigma_spatial),
        "bilateral_sigma_range": repr(cfg.bilateral_sigma_range),
        "lr_check_enabled": str(cfg.lr_check_enabled).lower(),
        "lr_max_diff": repr(cfg.lr_max_diff),
    }


def pipeline_config_from_kv(pairs: dict) -> PipelineConfig:
    base = PipelineConfig()
    cfg = PipelineConfig(
        cbca=CbcaParams(
            intensity_threshold=kv.get_float(pairs, "cbca_intensity",
                                             base.cbca.intensity_threshold),
            max_arm=kv.get_int(pairs, "cbca_max_arm", base.cbca.max_arm),
            iterations_1=kv.get_int(pairs, "cbca_num_iterations_1",
                                    base.cbca.iterations_1),
            iterations_2=kv.get_int(pairs, "cbca_num_iterations_2",
                                    base.cbca.iterations_2)),
        sgm=SgmParams(
            P1=kv.get_float(pairs, "sgm_P1", base.sgm.P1),
            P2=kv.get_float(pairs, "sgm_P2", base.sgm.P2),
            Q1=kv.get_float(pairs, "sgm_Q1", base.sgm.Q1),
            Q2=kv.get_float(pairs, "sgm_Q2", base.sgm.Q2),
            V=kv.get_float(pairs, "sgm_V", base.sgm.V)),
        sgm_enabled=kv.get_bool(pairs, "sgm_enabled", base.sgm_enabled),
        num_directions=kv.get_int(pairs, "num_directions", base.num_directions),
        subpixel_enabled=kv.get_bool(pairs, "subpixel_enabled", base.subpixel_enabled),
        median_radius=kv.get_int(pairs, "median_radius", base.median_radius),
        bilateral_enabled=kv.get_bool(pairs, "bilateral_enabled", base.bilateral_enabled),
        bilateral_sigma_spatial=kv.get_float(pairs, "bilateral_sigma_spatial",
                                             base.bilateral_sigma_spatial),
        bilateral_sigma_range=kv.get_float(pairs, "bilateral_sigma_range",
                                           base.bilateral_sigma_range),
        lr_check_enabled=kv.get_bool(pairs, "lr_check_enabled", base.lr_check_enabled),
        lr_max_diff=kv.get_float(pairs, "lr_max_diff", base.lr_max_diff),
    )
    return cfg.validate()


def write_pipeline_config(path, cfg: PipelineConfig) -> None:
    kv.write_kv_file(path, pipeline_config_to_kv(cfg))


def read_pipeline_config(path) -> PipelineConfig:
    return pipeline_config_from_kv(kv.read_kv_file(path))


@dataclass
class PipelineResult:
    disparity: np.ndarray
    raw_wta: np.ndarray
    timings: List[Tuple[str, float]]


def run_pipeline(volume, pair, cfg: PipelineConfig, threads: int = 1) -> PipelineResult:
    """Run the post-processing chain on a cost volume.

    `pair` is (left, right) grayscale in [0, 1]; aggregation reads the raw
    left image while the scanline penalties read standardized copies (the V
    threshold is defined on zero-mean unit-variance intensities).
    """
    volume = _check_volume(volume).astype(np.float32)
    cfg.validate()
    left, right = _guide_pair(pair, volume.shape)
    left_std, right_std = standardize_image(left), standardize_image(right)

    timings: List[Tuple[str, float]] = []

    def timed(name, fn):
        t0 = time.perf_counter()
        result = fn()
        timings.append((name, time.perf_counter() - t0))
        return result

    raw_wta = timed("wta_raw", lambda: wta(volume))

    # Hypotheses that do not exist in the input (sentinel entries) must stay
    # nonexistent through the cost stages: SGM's range normalization would
    # otherwise turn them into ordinary finite costs.
    invalid = volume >= COST_SENTINEL

    work = volume
    if cfg.cbca.iterations_1 > 0:
        work = timed("cbca_1", lambda v=work: cbca(v, left, cfg.cbca,
                                                   cfg.cbca.iterations_1))
    if cfg.sgm_enabled:
        work = timed("sgm", lambda v=work: sgm(v, (left_std, right_std), cfg.sgm,
                                               cfg.num_directions, threads=threads))
        work[invalid] = COST_SENTINEL
    if cfg.cbca.iterations_2 > 0:
        work = timed("cbca_2", lambda v=work: cbca(v, left, cfg.cbca,
                                                   cfg.cbca.iterations_2))

    if cfg.lr_check_enabled:
        disp = timed("lr_check", lambda v=work: left_right_check(v, cfg.lr_max_diff))
    else:
        disp = timed("wta", lambda v=work: wta(v))
    if cfg.subpixel_enabled:
        disp = timed("subpixel", lambda v=work, m=disp: subpixel_refine(v, m))
    if cfg.median_radius > 0:
        disp = timed("median", lambda m=disp: median_filter(m, cfg.median_radius))
    if cfg.bilateral_enabled:
        disp = timed("bilateral", lambda m=disp: bilateral_filter(
            m, left, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range))

    return PipelineResult(disparity=disp, raw_wta=raw_wta, timings=timings)


def pipeline_preset(name: str) -> PipelineConfig:
    try:
        return PIPELINE_PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown pipeline preset {name!r}; choose from {sorted(PIPELINE_PRESETS)}")
