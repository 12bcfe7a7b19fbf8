"""Small shared helpers: sentinels, atomic file writes, deterministic parallel map."""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

# Matching cost assigned to disparity hypotheses that fall outside the image.
# Chosen as the largest finite float32 so it is never preferred over a real cost.
COST_SENTINEL = float(np.finfo(np.float32).max)

# Marker for pixels with no usable disparity. Stored as NaN so plain arithmetic
# propagates it; use np.isfinite() to build validity masks.
INVALID_DISPARITY = float("nan")

T = TypeVar("T")
R = TypeVar("R")


def standardize_image(img) -> np.ndarray:
    """Zero-mean, unit-variance float64 copy; a flat image maps to zeros."""
    img = np.asarray(img, dtype=np.float64)
    std = img.std()
    if std == 0:
        return np.zeros_like(img)
    return (img - img.mean()) / std


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Map fn over items, optionally on a thread pool.

    Each item is computed independently and results are returned in input
    order, so the output is identical for every thread count.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write data to path via a temp file + rename so readers never see partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: str | os.PathLike, header: Iterable[str], rows: Iterable[Sequence]) -> None:
    """Write a simple CSV atomically."""
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
