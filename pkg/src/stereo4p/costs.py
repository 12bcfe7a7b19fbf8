"""Classical stereo matching costs: SAD, census, and a sampling-insensitive
pixelwise cost, plus per-pixel cost profiles over a disparity range.

All costs compare a left-image pixel (y, x) with the right-image pixel
(y, x - d). A hypothesis whose right-image partner falls outside the image is
assigned COST_SENTINEL. Windowed costs clip their windows at image borders and
only average over pixel pairs present in both images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .util import COST_SENTINEL, atomic_write_text

# Default census window.
CENSUS_DEFAULT_WINDOW = 9

# Window presets for narrow-vs-wide comparisons of windowed costs.
SMALL_COMPARE_WINDOW = 11
LARGE_COMPARE_WINDOW = 37

CostFn = Callable[[np.ndarray, np.ndarray, int, int, int], float]


def _check_pair(left, right) -> Tuple[np.ndarray, np.ndarray]:
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.ndim != 2 or right.ndim != 2:
        raise ShapeError(f"expected 2-D grayscale images, got {left.shape} and {right.shape}")
    if left.shape != right.shape:
        raise ShapeError(f"image shapes differ: {left.shape} vs {right.shape}")
    return left, right


def _check_window(window: int) -> int:
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be odd and positive, got {window}")
    return window


def _check_pixel(shape, y: int, x: int) -> Tuple[int, int]:
    h, w = shape
    y, x = int(y), int(x)
    if not (0 <= y < h and 0 <= x < w):
        raise ShapeError(f"pixel ({y}, {x}) outside image of shape {shape}")
    return y, x


def sad_cost(left, right, window: int, y: int, x: int, d: int) -> float:
    """Mean absolute intensity difference over a clipped window.

    Window pixels whose disparity-shifted partner lies outside the right
    image are left out of the mean. Returns COST_SENTINEL when the center
    pixel itself has no partner (x - d outside the image).
    """
    left, right = _check_pair(left, right)
    window = _check_window(window)
    y, x = _check_pixel(left.shape, y, x)
    h, w = left.shape
    d = int(d)
    if not (0 <= x - d < w):
        return COST_SENTINEL
    r = window // 2
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    cols = np.arange(x0, x1)
    cols = cols[(cols - d >= 0) & (cols - d < w)]
    diff = np.abs(left[y0:y1, cols] - right[y0:y1, cols - d])
    return float(diff.mean())


def census_cost(left, right, window: int, y: int, x: int, d: int) -> float:
    """Hamming distance between census bit strings, normalized by bit count.

    Each bit records neighbor < center within the window. Only neighbor
    offsets that land inside both images contribute bits, so the value is
    always an average over comparable positions. Because the bits depend
    only on intensity order, the cost is invariant to any strictly
    increasing intensity remapping of either image.
    """
    left, right = _check_pair(left, right)
    window = _check_window(window)
    y, x = _check_pixel(left.shape, y, x)
    h, w = left.shape
    d = int(d)
    xr = x - d
    if not (0 <= xr < w):
        return COST_SENTINEL
    r = window // 2
    offs_y, offs_x = np.mgrid[-r: r + 1, -r: r + 1]
    offs_y, offs_x = offs_y.ravel(), offs_x.ravel()
    keep = ~((offs_y == 0) & (offs_x == 0))
    offs_y, offs_x = offs_y[keep], offs_x[keep]
    ly, lx = y + offs_y, x + offs_x
    ry, rx = y + offs_y, xr + offs_x
    valid = (ly >= 0) & (ly < h) & (lx >= 0) & (lx < w) & (rx >= 0) & (rx < w)
    if not valid.any():
        return 0.0
    bl = left[ly[valid], lx[valid]] < left[y, x]
    br = right[ry[valid], rx[valid]] < right[y, xr]
    return float(np.mean(bl != br))


def pixelwise_cost(left, right, y: int, x: int, d: int) -> float:
    """Sampling-insensitive absolute difference of two single pixels.

    Each pixel is compared not just to the other pixel's sample but to the
    interval spanned by that sample and its half-pixel linear interpolants,
    which makes the cost robust to sub-pixel alignment of image edges. The
    reported value is the minimum of the two directed interval distances.
    """
    left, right = _check_pair(left, right)
    y, x = _check_pixel(left.shape, y, x)
    h, w = left.shape
    d = int(d)
    xr = x - d
    if not (0 <= xr < w):
        return COST_SENTINEL

    def interval(img: np.ndarray, xi: int) -> Tuple[float, float, float]:
        center = img[y, xi]
        half_lo = 0.5 * (center + img[y, max(xi - 1, 0)])
        half_hi = 0.5 * (center + img[y, min(xi + 1, w - 1)])
        return center, min(half_lo, center, half_hi), max(half_lo, center, half_hi)

    il, lo_l, hi_l = interval(left, x)
    ir, lo_r, hi_r = interval(right, xr)
    d_lr = max(0.0, il - hi_r, lo_r - il)
    d_rl = max(0.0, ir - hi_l, lo_l - ir)
    return float(min(d_lr, d_rl))


def windowed_cost(fn: Callable[..., float], window: int) -> CostFn:
    """Bind a window size onto sad_cost/census_cost, yielding the common
    (left, right, y, x, d) call shape used by cost_profile."""
    window = _check_window(window)

    def bound(left, right, y, x, d):
        return fn(left, right, window, y, x, d)

    return bound


@dataclass
class CostProfile:
    """Costs of one pixel over all disparity hypotheses, min-max normalized.

    raw holds the unnormalized costs (sentinels included); costs holds the
    normalized values: finite entries are mapped to [0, 1], sentinel entries
    to exactly 1, and a constant profile maps to all zeros.
    """

    pixel: Tuple[int, int]
    costs: np.ndarray
    raw: np.ndarray

    @property
    def ndisp(self) -> int:
        return int(self.costs.shape[0])

    def to_csv_text(self) -> str:
        lines = ["d,cost"]
        lines.extend(f"{d},{self.costs[d]:.6f}" for d in range(self.ndisp))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv_text())


def normalize_profile(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant profile becomes all zeros and
    sentinel (out-of-range) entries become exactly 1."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.zeros_like(raw)
    usable = raw < COST_SENTINEL
    if usable.any():
        lo = raw[usable].min()
        hi = raw[usable].max()
        if hi > lo:
            out[usable] = (raw[usable] - lo) / (hi - lo)
    out[~usable] = 1.0
    return out


def cost_profile(cost_fn: CostFn, pair, y: int, x: int, ndisp: int) -> CostProfile:
    """Evaluate cost_fn(left, right, y, x, d) for d in [0, ndisp) at one pixel."""
    left, right = pair
    left, right = _check_pair(left, right)
    y, x = _check_pixel(left.shape, y, x)
    ndisp = int(ndisp)
    if ndisp < 1:
        raise ConfigError(f"ndisp must be positive, got {ndisp}")
    raw = np.array([float(cost_fn(left, right, y, x, d)) for d in range(ndisp)])
    return CostProfile(pixel=(y, x), costs=normalize_profile(raw), raw=raw)


def _box_ratio(num: np.ndarray, den: np.ndarray, window: int) -> np.ndarray:
    """Ratio of clipped-window box sums, i.e. the mean of num weighted by den."""
    from .tensor import pool

    sn = pool(num[:, :, None].astype(np.float64), window, mode="mean")[:, :, 0]
    sd = pool(den[:, :, None].astype(np.float64), window, mode="mean")[:, :, 0]
    out = np.zeros_like(sn)
    np.divide(sn, sd, out=out, where=sd > 0)
    return out


def sad_volume(left, right, ndisp: int, window: int) -> np.ndarray:
    """Vectorized SAD cost volume; entry [y, x, d] equals sad_cost(..., y, x, d)."""
    left, right = _check_pair(left, right)
    window = _check_window(window)
    h, w = left.shape
    ndisp = int(ndisp)
    volume = np.full((h, w, ndisp), COST_SENTINEL, dtype=np.float32)
    for d in range(ndisp):
        if d >= w:
            break
        diff = np.zeros((h, w))
        valid = np.zeros((h, w))
        diff[:, d:] = np.abs(left[:, d:] - right[:, : w - d])
        valid[:, d:] = 1.0
        mean = _box_ratio(diff, valid, window)
        volume[:, d:, d] = mean[:, d:].astype(np.float32)
    return volume


def _census_planes(img: np.ndarray, window: int):
    """Per-offset neighbor<center bit planes and their in-image validity."""
    h, w = img.shape
    r = window // 2
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
               if not (dy == 0 and dx == 0)]
    bits = np.zeros((len(offsets), h, w), dtype=bool)
    valid = np.zeros((len(offsets), h, w), dtype=bool)
    ys, xs = np.mgrid[0:h, 0:w]
    for k, (dy, dx) in enumerate(offsets):
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        sample = img[np.clip(ny, 0, h - 1), np.clip(nx, 0, w - 1)]
        bits[k] = ok & (sample < img)
        valid[k] = ok
    return bits, valid


def census_volume(left, right, ndisp: int, window: int = CENSUS_DEFAULT_WINDOW) -> np.ndarray:
    """Vectorized census cost volume; entries match census_cost pointwise."""
    left, right = _check_pair(left, right)
    window = _check_window(window)
    h, w = left.shape
    ndisp = int(ndisp)
    lbits, lvalid = _census_planes(left, window)
    rbits, rvalid = _census_planes(right, window)
    volume = np.full((h, w, ndisp), COST_SENTINEL, dtype=np.float32)
    for d in range(ndisp):
        if d >= w:
            break
        both = lvalid[:, :, d:] & rvalid[:, :, : w - d]
        diff = (lbits[:, :, d:] != rbits[:, :, : w - d]) & both
        nbits = both.sum(axis=0).astype(np.float64)
        ndiff = diff.sum(axis=0).astype(np.float64)
        cost = np.zeros_like(ndiff)
        np.divide(ndiff, nbits, out=cost, where=nbits > 0)
        volume[:, d:, d] = cost.astype(np.float32)
    return volume


def pixelwise_volume(left, right, ndisp: int) -> np.ndarray:
    """Vectorized sampling-insensitive cost volume matching pixelwise_cost."""
    left, right = _check_pair(left, right)
    h, w = left.shape
    ndisp = int(ndisp)

    def intervals(img: np.ndarray):
        lo_n = np.empty_like(img)
        hi_n = np.empty_like(img)
        lo_n[:, 0] = img[:, 0]
        lo_n[:, 1:] = img[:, :-1]
        hi_n[:, -1] = img[:, -1]
        hi_n[:, :-1] = img[:, 1:]
        a = 0.5 * (img + lo_n)
        b = 0.5 * (img + hi_n)
        lo = np.minimum(np.minimum(a, b), img)
        hi = np.maximum(np.maximum(a, b), img)
        return lo, hi

    lo_l, hi_l = intervals(left)
    lo_r, hi_r = intervals(right)
    volume = np.full((h, w, ndisp), COST_SENTINEL, dtype=np.float32)
    for d in range(ndisp):
        if d >= w:
            break
        il, ir = left[:, d:], right[:, : w - d]
        d_lr = np.maximum(0.0, np.maximum(il - hi_r[:, : w - d], lo_r[:, : w - d] - il))
        d_rl = np.maximum(0.0, np.maximum(ir - hi_l[:, d:], lo_l[:, d:] - ir))
        volume[:, d:, d] = np.minimum(d_lr, d_rl).astype(np.float32)
    return volume
