"""Dense H x W x C tensor kernels with reverse-mode gradients.

Tensors are plain numpy arrays laid out (row, column, channel) in C order,
float32 by default. Forward kernels accumulate inner products and window sums
in float64 and cast the result back to the input dtype, so results are
deterministic and independent of any internal blocking. Backward kernels take
the upstream gradient together with the forwarded input (the cached
activation) and return float64 gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ShapeError

POOL_MODES = ("max", "mean")


def as_tensor(arr, name: str = "tensor", check_finite: bool = False) -> np.ndarray:
    """Coerce to a (H, W, C) float array, validating rank and finiteness."""
    out = np.asarray(arr)
    if out.ndim == 2:
        out = out[:, :, None]
    if out.ndim != 3:
        raise ShapeError(f"{name}: expected (H, W, C) array, got shape {out.shape}")
    if out.dtype not in (np.float32, np.float64):
        out = out.astype(np.float32)
    if check_finite and not np.all(np.isfinite(out)):
        raise ShapeError(f"{name}: contains non-finite values")
    return out


@dataclass
class ConvLayer:
    """A 2-D cross-correlation layer: odd kernel, per-output-channel bias.

    kernel has shape (kh, kw, cin, cout); padding is "valid" or "same".
    """

    kernel: np.ndarray
    bias: np.ndarray
    padding: str = "valid"

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        self.bias = np.asarray(self.bias)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel: expected (kh, kw, cin, cout), got shape {self.kernel.shape}")
        kh, kw, _, cout = self.kernel.shape
        if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
            raise ShapeError(f"kernel dims must be odd and positive, got {kh}x{kw}")
        if self.bias.shape != (cout,):
            raise ShapeError(f"bias: expected shape ({cout},), got {self.bias.shape}")
        if self.padding not in ("valid", "same"):
            raise ShapeError(f"padding must be 'valid' or 'same', got {self.padding!r}")

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[3]

    @classmethod
    def random(cls, kh: int, kw: int, cin: int, cout: int, rng: np.random.Generator,
               padding: str = "valid") -> "ConvLayer":
        """He-initialized kernel, zero bias."""
        scale = np.sqrt(2.0 / (kh * kw * cin))
        kernel = (rng.standard_normal((kh, kw, cin, cout)) * scale).astype(np.float32)
        bias = np.zeros(cout, dtype=np.float32)
        return cls(kernel=kernel, bias=bias, padding=padding)

    def astype(self, dtype) -> "ConvLayer":
        return ConvLayer(self.kernel.astype(dtype), self.bias.astype(dtype), self.padding)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Extract valid patches: (H, W, C) -> (H-kh+1, W-kw+1, kh*kw*C)."""
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))  # (H', W', C, kh, kw)
    win = win.transpose(0, 1, 3, 4, 2)  # (H', W', kh, kw, C)
    oh, ow = win.shape[:2]
    return win.reshape(oh, ow, kh * kw * x.shape[2])


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlate x with layer.kernel and add bias.

    Valid padding shrinks the output to (H-kh+1, W-kw+1); same padding
    zero-pads so the spatial shape is preserved.
    """
    x = as_tensor(x, "conv2d input")
    kh, kw, cin, cout = layer.kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[2]} channels, kernel expects {cin}")
    if layer.padding == "same":
        x = np.pad(x, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    if x.shape[0] < kh or x.shape[1] < kw:
        raise ShapeError(
            f"conv2d: input {x.shape[0]}x{x.shape[1]} smaller than kernel {kh}x{kw}")
    cols = _im2col(x, kh, kw).astype(np.float64)
    oh, ow = cols.shape[:2]
    kmat = layer.kernel.reshape(kh * kw * cin, cout).astype(np.float64)
    y = cols.reshape(oh * ow, -1) @ kmat + layer.bias.astype(np.float64)
    return y.reshape(oh, ow, cout).astype(x.dtype)


def conv2d_backward(gy: np.ndarray, x: np.ndarray, layer: ConvLayer):
    """Gradients of conv2d: returns (gx, gkernel, gbias) as float64 arrays."""
    if gy is None or x is None:
        raise ShapeError("conv2d_backward: missing cached activation or upstream gradient")
    x = as_tensor(x, "conv2d input")
    gy = np.asarray(gy, dtype=np.float64)
    kh, kw, cin, cout = layer.kernel.shape
    pad = (kh // 2, kw // 2) if layer.padding == "same" else (0, 0)
    xp = np.pad(x, ((pad[0], pad[0]), (pad[1], pad[1]), (0, 0))) if layer.padding == "same" else x
    oh, ow = xp.shape[0] - kh + 1, xp.shape[1] - kw + 1
    if gy.shape != (oh, ow, cout):
        raise ShapeError(f"conv2d_backward: upstream gradient shape {gy.shape} "
                         f"does not match output shape {(oh, ow, cout)}")
    cols = _im2col(xp, kh, kw).astype(np.float64).reshape(oh * ow, -1)
    gflat = gy.reshape(oh * ow, cout)
    gbias = gflat.sum(axis=0)
    gkernel = (cols.T @ gflat).reshape(kh, kw, cin, cout)
    # Input gradient: scatter each kernel tap's contribution back onto the image.
    gcols = (gflat @ layer.kernel.reshape(-1, cout).astype(np.float64).T)
    gcols = gcols.reshape(oh, ow, kh, kw, cin)
    gxp = np.zeros(xp.shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gxp[i:i + oh, j:j + ow, :] += gcols[:, :, i, j, :]
    if layer.padding == "same":
        gx = gxp[pad[0]:pad[0] + x.shape[0], pad[1]:pad[1] + x.shape[1], :]
    else:
        gx = gxp
    return gx, gkernel, gbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(gy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the subgradient at exactly 0 is taken as 0."""
    if gy is None or x is None:
        raise ShapeError("relu_backward: missing cached activation or upstream gradient")
    return np.asarray(gy, dtype=np.float64) * (np.asarray(x) > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos].astype(np.float64)))
    ex = np.exp(x[~pos].astype(np.float64))
    out[~pos] = ex / (1.0 + ex)
    return out.astype(x.dtype)


def sigmoid_backward(gy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward through sigmoid given its OUTPUT y."""
    y64 = np.asarray(y, dtype=np.float64)
    return np.asarray(gy, dtype=np.float64) * y64 * (1.0 - y64)


def _check_pool_args(size: int, mode: str) -> None:
    if size < 1 or size % 2 == 0:
        raise ShapeError(f"pool size must be odd and positive, got {size}")
    if mode not in POOL_MODES:
        raise ShapeError(f"pool mode must be one of {POOL_MODES}, got {mode!r}")


def _window_counts(h: int, w: int, size: int) -> np.ndarray:
    """Number of in-image pixels of the clipped (size x size) window at each position."""
    r = size // 2
    idx_y = np.arange(h)
    idx_x = np.arange(w)
    cy = np.minimum(idx_y + r, h - 1) - np.maximum(idx_y - r, 0) + 1
    cx = np.minimum(idx_x + r, w - 1) - np.maximum(idx_x - r, 0) + 1
    return (cy[:, None] * cx[None, :]).astype(np.float64)


def _sliding_sum(x64: np.ndarray, size: int) -> np.ndarray:
    """Clipped sliding-window sum over the two leading axes, float64 exact."""
    r = size // 2

    def along(arr, axis):
        n = arr.shape[axis]
        c = np.cumsum(arr, axis=axis)
        hi = np.minimum(np.arange(n) + r, n - 1)
        lo = np.arange(n) - r - 1
        top = np.take(c, hi, axis=axis)
        bottom = np.take(c, np.maximum(lo, 0), axis=axis)
        mask_shape = [1] * arr.ndim
        mask_shape[axis] = n
        keep = (lo >= 0).reshape(mask_shape)
        return top - np.where(keep, bottom, 0.0)

    return along(along(x64, 0), 1)


def pool(x: np.ndarray, size: int, mode: str = "max") -> np.ndarray:
    """Stride-1 pooling with the window clipped at image borders.

    Output spatial shape equals input shape; max/mean are taken over the
    in-image pixels of each window only, so constant inputs are fixed points.
    """
    x = as_tensor(x, "pool input")
    _check_pool_args(size, mode)
    if size == 1:
        return x.copy()
    if mode == "max":
        # Nearest-edge padding replicates pixels that are already inside every
        # clipped window, so the filter result equals the clipped-window max.
        return ndimage.maximum_filter(x, size=(size, size, 1), mode="nearest")
    sums = _sliding_sum(x.astype(np.float64), size)
    counts = _window_counts(x.shape[0], x.shape[1], size)
    return (sums / counts[:, :, None]).astype(x.dtype)


def pool_backward(gy: np.ndarray, x: np.ndarray, size: int, mode: str = "max") -> np.ndarray:
    """Gradient of pool. Max mode routes each window's gradient to its argmax
    (first maximum in row-major window order); mean mode spreads it uniformly
    over the window's in-image pixels.
    """
    if gy is None or x is None:
        raise ShapeError("pool_backward: missing cached activation or upstream gradient")
    x = as_tensor(x, "pool input")
    _check_pool_args(size, mode)
    gy = np.asarray(gy, dtype=np.float64)
    if gy.shape != x.shape:
        raise ShapeError(f"pool_backward: gradient shape {gy.shape} != input shape {x.shape}")
    if size == 1:
        return gy.copy()
    h, w, c = x.shape
    if mode == "mean":
        counts = _window_counts(h, w, size)
        return _sliding_sum(gy / counts[:, :, None], size)
    r = size // 2
    xp = np.pad(x, ((r, r), (r, r), (0, 0)), constant_values=-np.inf)
    win = sliding_window_view(xp, (size, size), axis=(0, 1))  # (h, w, c, size, size)
    am = win.reshape(h, w, c, size * size).argmax(axis=3)
    src_y = np.arange(h)[:, None, None] + am // size - r
    src_x = np.arange(w)[None, :, None] + am % size - r
    src_c = np.broadcast_to(np.arange(c), am.shape)
    gx = np.zeros(x.shape, dtype=np.float64)
    np.add.at(gx, (src_y, src_x, src_c), gy)
    return gx


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    """Stack tensors along the channel axis, in input order."""
    if not parts:
        raise ShapeError("concat_channels: need at least one tensor")
    tensors = [as_tensor(p, f"concat part {i}") for i, p in enumerate(parts)]
    base = tensors[0].shape[:2]
    for i, t in enumerate(tensors):
        if t.shape[:2] != base:
            raise ShapeError(f"concat_channels: part {i} spatial shape {t.shape[:2]} != {base}")
    return np.concatenate(tensors, axis=2)


def split_channels(x: np.ndarray, counts: list[int]) -> list[np.ndarray]:
    """Inverse of concat_channels: slice back into per-part channel slabs."""
    x = np.asarray(x)
    if sum(counts) != x.shape[2]:
        raise ShapeError(f"split_channels: counts {counts} do not sum to {x.shape[2]} channels")
    edges = np.cumsum([0] + list(counts))
    return [x[:, :, edges[i]:edges[i + 1]] for i in range(len(counts))]
