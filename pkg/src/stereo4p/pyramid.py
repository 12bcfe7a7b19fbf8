"""Multi-scale stride-1 pooling with channel concatenation.

Pooling a feature map at several window sizes without striding and stacking
the results lets later 1x1 layers see coarse context and fine detail at every
pixel, growing the receptive field without reducing resolution.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import as_tensor, concat_channels, pool, pool_backward, split_channels

# Size vector used by the full-scale matching network: with an 11x11 trunk
# receptive field this widens the effective patch to 37x37.
DEFAULT_SIZES = (27, 9, 3, 1)


def validate_pool_sizes(sizes, strict_decreasing: bool = True) -> tuple[int, ...]:
    """Check a pooling size vector: odd positive entries, canonically decreasing.

    The canonical form (largest scale first) is required for network configs so
    slab order is unambiguous; pyramid_pool itself accepts any odd sizes.
    """
    try:
        out = tuple(int(s) for s in sizes)
    except (TypeError, ValueError) as exc:
        raise ShapeError(f"pool sizes must be integers, got {sizes!r}") from exc
    if len(out) == 0:
        raise ShapeError("pool size vector must have at least one entry")
    for s in out:
        if s < 1 or s % 2 == 0:
            raise ShapeError(f"pool sizes must be odd and positive, got {out}")
    if strict_decreasing and any(a <= b for a, b in zip(out, out[1:])):
        raise ShapeError(f"pool sizes must be strictly decreasing, got {out}")
    return out


def pyramid_pool(feat: np.ndarray, sizes, mode: str = "max") -> np.ndarray:
    """Pool feat at every window size (stride 1, clipped borders) and
    concatenate the results channel-wise, one slab per size in input order.

    A feature map of C channels becomes len(sizes) * C channels at unchanged
    spatial resolution. sizes = [1] is the identity.
    """
    feat = as_tensor(feat, "pyramid_pool input")
    sizes = validate_pool_sizes(sizes, strict_decreasing=False)
    return concat_channels([pool(feat, s, mode) for s in sizes])


def pyramid_pool_backward(gy: np.ndarray, feat: np.ndarray, sizes, mode: str = "max") -> np.ndarray:
    """Gradient of pyramid_pool: split the upstream gradient into per-size
    slabs and sum each slab's pool gradient."""
    feat = as_tensor(feat, "pyramid_pool input")
    sizes = validate_pool_sizes(sizes, strict_decreasing=False)
    c = feat.shape[2]
    slabs = split_channels(np.asarray(gy, dtype=np.float64), [c] * len(sizes))
    gx = np.zeros(feat.shape, dtype=np.float64)
    for slab, s in zip(slabs, sizes):
        gx += pool_backward(slab, feat, s, mode)
    return gx
