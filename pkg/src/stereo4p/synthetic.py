"""Synthetic stereo scenes with exact integer ground truth.

Scenes are built the cheap-but-honest way: a textured left image, a
piecewise-constant integer disparity map, and a right image assembled by
forward-warping left pixels with a depth test. Larger disparities win the
z-buffer, so occlusions appear where a near shape covers background, and
disoccluded right-image holes are filled with fresh texture. Because warps
are integer shifts there is no resampling blur; optional per-image noise is
the only thing separating the two views, which keeps the difficulty dial
explicit. Used by the tests, the trainer demos, and the evaluation harness.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .dataio import StereoSample
from .errors import ConfigError


def textured_image(rng: np.random.Generator, height: int, width: int,
                   contrast: float = 0.35) -> np.ndarray:
    """Two-scale random texture in [0.02, 0.98], aperiodic by construction."""
    fine = gaussian_filter(rng.standard_normal((height, width)), 0.7, mode="reflect")
    coarse = gaussian_filter(rng.standard_normal((height, width)), 5.0, mode="reflect")
    mix = 0.75 * fine / max(fine.std(), 1e-12) + 0.25 * coarse / max(coarse.std(), 1e-12)
    img = 0.5 + contrast * mix
    return np.clip(img, 0.02, 0.98)


def weaken_texture(image: np.ndarray, rect, strength: float) -> np.ndarray:
    """Scale deviations from the local mean inside rect by `strength`.

    strength 1.0 leaves the image alone; 0.0 flattens the region to its mean.
    rect is (y0, x0, y1, x1) with exclusive end coordinates.
    """
    y0, x0, y1, x1 = rect
    out = image.astype(np.float64, copy=True)
    region = out[y0:y1, x0:x1]
    if region.size == 0:
        raise ConfigError(f"weak-texture rect {rect} is empty")
    mean = region.mean()
    out[y0:y1, x0:x1] = mean + strength * (region - mean)
    return out


def boxy_disparity(rng: np.random.Generator, height: int, width: int,
                   ndisp: int, num_shapes: int = 4,
                   background: int = 2) -> np.ndarray:
    """Piecewise-constant integer disparity: a background plane plus
    axis-aligned rectangles at larger (nearer) disparities."""
    if not 0 <= background < ndisp:
        raise ConfigError(f"background disparity {background} outside [0, {ndisp})")
    disp = np.full((height, width), background, dtype=np.int32)
    for _ in range(num_shapes):
        sh = int(rng.integers(height // 5, max(height // 2, height // 5 + 1)))
        sw = int(rng.integers(width // 5, max(width // 2, width // 5 + 1)))
        y0 = int(rng.integers(0, max(height - sh, 1)))
        x0 = int(rng.integers(0, max(width - sw, 1)))
        d = int(rng.integers(background + 1, ndisp))
        disp[y0:y0 + sh, x0:x0 + sw] = d
    return disp


def boundary_mask(disparity: np.ndarray, radius: int = 3) -> np.ndarray:
    """True within `radius` (chebyshev) of a disparity discontinuity."""
    if radius < 1:
        return np.zeros(disparity.shape, dtype=bool)
    size = 2 * radius + 1
    hi = maximum_filter(disparity, size=size, mode="nearest")
    lo = minimum_filter(disparity, size=size, mode="nearest")
    return hi != lo


def render_right(left: np.ndarray, disparity: np.ndarray,
                 hole_texture: np.ndarray):
    """Forward-warp left pixels to the right view with a z-buffer.

    Returns (right, visible) where visible[y, x] is True iff left pixel
    (y, x) survives the depth test, i.e. its true correspondence actually
    shows its surface. Disoccluded right pixels come from hole_texture.
    """
    h, w = left.shape
    if disparity.shape != left.shape or hole_texture.shape != left.shape:
        raise ConfigError("render_right: image and disparity shapes must match")
    right = hole_texture.astype(np.float64, copy=True)
    owner = np.full((h, w), -1, dtype=np.int64)
    # Ascending disparity order makes nearer surfaces overwrite farther ones.
    for d in np.unique(disparity):
        ys, xs = np.nonzero(disparity == d)
        xr = xs - int(d)
        keep = xr >= 0
        right[ys[keep], xr[keep]] = left[ys[keep], xs[keep]]
        owner[ys[keep], xr[keep]] = int(d)
    xr_all = np.arange(w)[None, :] - disparity
    inside = xr_all >= 0
    visible = np.zeros((h, w), dtype=bool)
    yy = np.nonzero(inside)
    visible[yy] = owner[yy[0], xr_all[yy]] == disparity[yy]
    return right, visible


@dataclass
class SyntheticScene:
    """A rendered pair plus everything needed to score a match fairly."""

    sample: StereoSample
    disparity: np.ndarray      # exact integer map, left coordinates
    visible: np.ndarray        # bool, True where the correspondence exists
    boundary: np.ndarray       # bool, near a disparity discontinuity
    weak_region: np.ndarray    # bool, texture was attenuated here

    @property
    def eval_mask(self) -> np.ndarray:
        """Pixels fair to score: visible and away from depth edges."""
        return self.visible & ~self.boundary


def make_scene(seed: int, height: int = 96, width: int = 128, ndisp: int = 17,
               num_shapes: int = 4, background: int = 2,
               weak_rects=(), weak_strength: float = 0.05,
               noise_sigma: float = 0.01, contrast: float = 0.35,
               boundary_radius: int = 3, name: str = "") -> SyntheticScene:
    """Build a seeded scene: texture, boxy disparity, warp, noise.

    weak_rects is a sequence of (y0, x0, y1, x1) rectangles (left-image
    coordinates) whose texture contrast is multiplied by weak_strength
    before warping, so both views agree about where texture is weak.
    """
    if ndisp < 2:
        raise ConfigError(f"ndisp must be at least 2, got {ndisp}")
    rng = np.random.default_rng(seed)
    left = textured_image(rng, height, width, contrast)
    weak = np.zeros((height, width), dtype=bool)
    for rect in weak_rects:
        left = weaken_texture(left, rect, weak_strength)
        y0, x0, y1, x1 = rect
        weak[y0:y1, x0:x1] = True
    disparity = boxy_disparity(rng, height, width, ndisp, num_shapes, background)
    holes = textured_image(rng, height, width, contrast)
    right, visible = render_right(left, disparity, holes)
    if noise_sigma > 0:
        left = left + noise_sigma * rng.standard_normal(left.shape)
        right = right + noise_sigma * rng.standard_normal(right.shape)
    left = np.clip(left, 0.0, 1.0).astype(np.float32)
    right = np.clip(right, 0.0, 1.0).astype(np.float32)
    gt = disparity.astype(np.float32)
    gt[~visible] = np.nan
    sample = StereoSample(name=name or f"synthetic-{seed}", left=left, right=right,
                          ndisp=ndisp, gt=gt, weight=1.0)
    return SyntheticScene(sample=sample, disparity=disparity, visible=visible,
                          boundary=boundary_mask(disparity, boundary_radius),
                          weak_region=weak)


def weak_texture_scene(seed: int, height: int = 96, width: int = 128,
                       ndisp: int = 17, region: int = 21,
                       weak_strength: float = 0.05,
                       noise_sigma: float = 0.01) -> SyntheticScene:
    """A scene whose center carries a weak-texture square on an otherwise
    well-textured surface; context within a wide window disambiguates it."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    y0 = int(rng.integers(height // 4, height // 2))
    x0 = int(rng.integers(width // 4, width // 2))
    rect = (y0, x0, y0 + region, x0 + region)
    return make_scene(seed, height, width, ndisp, weak_rects=(rect,),
                      weak_strength=weak_strength, noise_sigma=noise_sigma,
                      name=f"weak-{seed}")


def scene_suite(seeds, **kwargs):
    return [make_scene(seed, **kwargs) for seed in seeds]
