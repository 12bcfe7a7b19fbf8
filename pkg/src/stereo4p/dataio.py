"""Dataset I/O and evaluation: PFM disparity maps, PGM/PNG images,
calibration files, the bad-pixel metric, and map rendering.

Disparity maps are float32 arrays with NaN marking invalid pixels. Images
decode to float64 grayscale in [0, 1]; color inputs are converted with BT.601
luminance weights.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ShapeError
from .util import atomic_write_bytes, write_csv

# ---------------------------------------------------------------------------
# PFM


def _pfm_tokens(data: bytes, count: int):
    """First `count` whitespace-separated tokens and the offset just past the
    single whitespace byte that terminates the last one."""
    tokens = []
    pos = 0
    for _ in range(count):
        while pos < len(data) and data[pos: pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos: pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"PFM header truncated at byte {start}")
        tokens.append(data[start:pos])
        pos += 1  # exactly one whitespace byte separates header fields
    return tokens, pos


def read_pfm(path) -> np.ndarray:
    """Decode a grayscale PFM file to a float32 map.

    The header's scale sign selects endianness (negative = little endian);
    rows are stored bottom-up. Non-finite samples become NaN.
    """
    with open(os.fspath(path), "rb") as f:
        data = f.read()
    tokens, offset = _pfm_tokens(data, 4)
    magic = tokens[0]
    if magic == b"PF":
        raise DataError("color PFM not supported, expected grayscale 'Pf' at byte 0")
    if magic != b"Pf":
        raise DataError(f"bad PFM magic {magic!r} at byte 0")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise DataError(f"bad PFM header fields {tokens[1:]} near byte {offset}") from exc
    if width <= 0 or height <= 0:
        raise DataError(f"bad PFM dimensions {width}x{height}")
    if scale == 0:
        raise DataError("PFM scale must be nonzero")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * 4
    payload = data[offset: offset + expected]
    if len(payload) < expected:
        raise DataError(
            f"PFM payload truncated: expected {expected} bytes from byte {offset}, "
            f"file ends at byte {len(data)}")
    values = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    grid = values.reshape(height, width)[::-1, :].copy()
    grid[~np.isfinite(grid)] = np.nan
    return grid


def write_pfm(disp, path) -> None:
    """Encode a map as little-endian grayscale PFM (scale -1.0), bottom-up
    rows, invalid (NaN) pixels stored as +Inf."""
    disp = np.asarray(disp, dtype=np.float32)
    if disp.ndim != 2:
        raise ShapeError(f"disparity map must be 2-D, got {disp.shape}")
    h, w = disp.shape
    out = disp.copy()
    out[~np.isfinite(out)] = np.inf
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = out[::-1, :].astype("<f4").tobytes()
    atomic_write_bytes(path, header + body)


# ---------------------------------------------------------------------------
# Images


def _read_pgm_bytes(data: bytes) -> np.ndarray:
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            if data[pos: pos + 1].isspace():
                pos += 1
            elif data[pos: pos + 1] == b"#":
                while pos < len(data) and data[pos: pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos: pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"PGM header truncated at byte {start}")
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise DataError(f"unsupported PGM magic {magic!r}, expected P5")
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    pos += 1  # single whitespace byte after maxval
    if maxval <= 0 or maxval >= 65536:
        raise DataError(f"bad PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    payload = data[pos: pos + expected]
    if len(payload) < expected:
        raise DataError(
            f"PGM payload truncated: expected {expected} bytes from byte {pos}")
    raster = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return raster.astype(np.float64) / float(maxval)


BT601_WEIGHTS = (0.299, 0.587, 0.114)


def read_image(path) -> np.ndarray:
    """Load an 8/16-bit PGM or PNG as float64 grayscale in [0, 1]."""
    path = os.fspath(path)
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"P5":
        with open(path, "rb") as f:
            return _read_pgm_bytes(f.read())

    from PIL import Image

    with Image.open(path) as img:
        mode = img.mode
        arr = np.asarray(img)
    if mode in ("RGB", "RGBA"):
        rgb = arr[:, :, :3].astype(np.float64) / 255.0
        r, g, b = BT601_WEIGHTS
        return r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode == "LA":
        return arr[:, :, 0].astype(np.float64) / 255.0
    if mode in ("I;16", "I"):
        return arr.astype(np.float64) / 65535.0
    raise DataError(f"unsupported image mode {mode!r} in {path}")


def write_gray_png(values: np.ndarray, path) -> None:
    """Write a uint8 grayscale PNG atomically with deterministic bytes."""
    from PIL import Image

    values = np.asarray(values)
    if values.dtype != np.uint8 or values.ndim != 2:
        raise ShapeError("expected a 2-D uint8 array")
    buf = io.BytesIO()
    Image.fromarray(values, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Calibration and samples


@dataclass
class CalibInfo:
    ndisp: int
    width: Optional[int]
    height: Optional[int]
    raw: Dict[str, str] = field(default_factory=dict)


def read_calib(path) -> CalibInfo:
    """Parse a key=value calibration file; ndisp is required."""
    raw: Dict[str, str] = {}
    with open(os.fspath(path), "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                continue
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    if "ndisp" not in raw:
        raise DataError(f"{path}: calibration file has no ndisp key")
    try:
        ndisp = int(round(float(raw["ndisp"])))
    except ValueError as exc:
        raise DataError(f"{path}: bad ndisp value {raw['ndisp']!r}") from exc

    def opt_int(key):
        if key in raw:
            try:
                return int(round(float(raw[key])))
            except ValueError:
                return None
        return None

    return CalibInfo(ndisp=ndisp, width=opt_int("width"), height=opt_int("height"), raw=raw)


@dataclass
class StereoSample:
    """One rectified pair with optional ground truth."""

    name: str
    left: np.ndarray
    right: np.ndarray
    ndisp: int
    gt: Optional[np.ndarray] = None
    weight: float = 1.0

    def validate(self) -> "StereoSample":
        if self.left.shape != self.right.shape:
            raise ShapeError(
                f"{self.name}: left {self.left.shape} vs right {self.right.shape}")
        if self.gt is not None and self.gt.shape != self.left.shape:
            raise ShapeError(
                f"{self.name}: ground truth {self.gt.shape} vs image {self.left.shape}")
        if self.ndisp < 1:
            raise DataError(f"{self.name}: ndisp must be positive, got {self.ndisp}")
        return self


def load_sample(directory, name: Optional[str] = None, weight: float = 1.0) -> StereoSample:
    """Load a sample directory holding im0/im1 images, calib.txt, and an
    optional disp0GT.pfm ground truth."""
    directory = os.fspath(directory)
    name = name or os.path.basename(os.path.normpath(directory))

    def find_image(stem):
        for ext in ("png", "pgm"):
            candidate = os.path.join(directory, f"{stem}.{ext}")
            if os.path.exists(candidate):
                return candidate
        raise DataError(f"{directory}: missing {stem}.png or {stem}.pgm")

    left = read_image(find_image("im0"))
    right = read_image(find_image("im1"))
    calib = read_calib(os.path.join(directory, "calib.txt"))
    gt_path = os.path.join(directory, "disp0GT.pfm")
    gt = read_pfm(gt_path) if os.path.exists(gt_path) else None
    return StereoSample(name=name, left=left, right=right, ndisp=calib.ndisp,
                        gt=gt, weight=weight).validate()


# ---------------------------------------------------------------------------
# Metrics


def bad_pixel_error(disp, gt, threshold: float = 2.0,
                    mask: Optional[np.ndarray] = None) -> float:
    """Percentage of evaluated pixels with |disp - gt| > threshold.

    Pixels with invalid ground truth are excluded from evaluation; pixels the
    optional mask zeroes out are excluded as well; evaluated pixels with an
    invalid estimate count as bad.
    """
    disp = np.asarray(disp, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if disp.shape != gt.shape:
        raise ShapeError(f"disparity {disp.shape} vs ground truth {gt.shape}")
    evaluated = np.isfinite(gt)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != gt.shape:
            raise ShapeError(f"mask {mask.shape} vs ground truth {gt.shape}")
        evaluated &= mask.astype(bool)
    n_eval = int(evaluated.sum())
    if n_eval == 0:
        raise DataError("no pixels to evaluate (ground truth entirely invalid)")
    diff = np.abs(disp - gt)
    bad = evaluated & (~np.isfinite(disp) | (diff > threshold))
    return 100.0 * float(bad.sum()) / n_eval


def weighted_average(errors: Sequence[float], weights: Sequence[float]) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if errors.shape != weights.shape or errors.ndim != 1:
        raise ShapeError(f"errors {errors.shape} vs weights {weights.shape}")
    if np.any(weights < 0):
        raise DataError("weights must be nonnegative")
    total = weights.sum()
    if total == 0:
        raise DataError("weights sum to zero")
    return float((errors * weights).sum() / total)


def read_weights_table(path) -> Dict[str, float]:
    """Per-sample averaging weights, one `name weight` pair per line."""
    table: Dict[str, float] = {}
    with open(os.fspath(path), "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'name weight', got {line!r}")
            try:
                table[parts[0]] = float(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad weight {parts[1]!r}") from exc
    return table


def write_metrics_csv(path, rows: List[Tuple[str, float, float]]) -> None:
    """CSV report: sample,error,weight."""
    write_csv(path, ["sample", "error", "weight"],
              [(name, f"{err:.6f}", f"{wgt:.6f}") for name, err, wgt in rows])


# ---------------------------------------------------------------------------
# Rendering


def render_disparity(disp, ndisp: int) -> np.ndarray:
    """Grayscale rendering: 0 maps to black, ndisp-1 to white, invalid to 0."""
    disp = np.asarray(disp, dtype=np.float64)
    if ndisp < 2:
        raise DataError(f"ndisp must be >= 2 for rendering, got {ndisp}")
    scaled = np.clip(disp / float(ndisp - 1), 0.0, 1.0) * 255.0
    out = np.zeros(disp.shape, dtype=np.uint8)
    finite = np.isfinite(disp)
    out[finite] = np.rint(scaled[finite]).astype(np.uint8)
    return out


def render_error_map(disp, gt, threshold: float = 2.0) -> np.ndarray:
    """White = within threshold, black = bad, mid-gray = not evaluated."""
    disp = np.asarray(disp, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if disp.shape != gt.shape:
        raise ShapeError(f"disparity {disp.shape} vs ground truth {gt.shape}")
    out = np.full(disp.shape, 128, dtype=np.uint8)
    evaluated = np.isfinite(gt)
    good = evaluated & np.isfinite(disp) & (np.abs(disp - gt) <= threshold)
    bad = evaluated & ~good
    out[good] = 255
    out[bad] = 0
    return out


def save_disparity_render(disp, ndisp: int, path) -> None:
    write_gray_png(render_disparity(disp, ndisp), path)


def save_error_render(disp, gt, threshold: float, path) -> None:
    write_gray_png(render_error_map(disp, gt, threshold), path)
