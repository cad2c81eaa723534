"""Grid segmentation, blur-based segment exclusion, and segment cropping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True, order=True)
class SegmentRef:
    """One cell of an image's grid partition, addressed by (row, col)."""

    image_id: str
    row: int
    col: int
    top: int
    left: int
    height: int
    width: int

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.height, self.width)

    def key(self) -> tuple[str, int, int]:
        return (self.image_id, self.row, self.col)


def split_axis(n: int, parts: int) -> list[tuple[int, int]]:
    """Cut [0, n) into `parts` spans of floor(n/parts), remainder to the last."""
    base = n // parts
    bounds = []
    start = 0
    for i in range(parts):
        size = base if i < parts - 1 else n - base * (parts - 1)
        bounds.append((start, start + size))
        start += size
    return bounds


def grid_segments(
    height: int,
    width: int,
    grid_rows: int = 4,
    grid_cols: int = 4,
    image_id: str = "",
) -> list[SegmentRef]:
    """Row-major grid cells tiling the image exactly."""
    if height < grid_rows or width < grid_cols:
        raise InputError(
            f"image {height}x{width} smaller than grid {grid_rows}x{grid_cols}"
        )
    rows = split_axis(height, grid_rows)
    cols = split_axis(width, grid_cols)
    refs = []
    for r, (top, bottom) in enumerate(rows):
        for c, (left, right) in enumerate(cols):
            refs.append(
                SegmentRef(
                    image_id=image_id,
                    row=r,
                    col=c,
                    top=top,
                    left=left,
                    height=bottom - top,
                    width=right - left,
                )
            )
    return refs


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, radius ceil(3*sigma)."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-reflecting padding."""
    kernel = gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    work = np.asarray(image, dtype=np.float64)
    squeeze = work.ndim == 2
    if squeeze:
        work = work[:, :, None]

    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (radius, radius)
        padded = np.pad(work, pad, mode="symmetric")
        out = np.zeros_like(work)
        for k, weight in enumerate(kernel):
            if axis == 0:
                out += weight * padded[k : k + work.shape[0], :, :]
            else:
                out += weight * padded[:, k : k + work.shape[1], :]
        work = out

    if squeeze:
        work = work[:, :, 0]
    return work


def _check_refs(image: np.ndarray, refs: list[SegmentRef]) -> None:
    h, w = image.shape[0], image.shape[1]
    for ref in refs:
        if ref.top < 0 or ref.left < 0 or ref.top + ref.height > h or ref.left + ref.width > w:
            raise InputError(f"segment {ref.key()} does not fit a {h}x{w} image")


def default_sigma(refs: list[SegmentRef]) -> float:
    """Half the largest cell edge; strong enough to wash out cell structure."""
    if not refs:
        raise InputError("no segments")
    return max(max(r.height, r.width) for r in refs) / 2.0


def blurred_for_exclusion(image: np.ndarray, sigma: float) -> np.ndarray:
    """Full-image blur used as the source of excluded-region pixels."""
    arr = np.asarray(image, dtype=np.float32)
    return np.clip(gaussian_blur(arr, sigma), 0.0, 1.0).astype(np.float32)


def composite_excluded(
    image: np.ndarray, blurred: np.ndarray, excluded: list[SegmentRef]
) -> np.ndarray:
    """Original pixels everywhere except the excluded cells, taken blurred."""
    arr = np.asarray(image, dtype=np.float32)
    out = arr.copy()
    if not excluded:
        return out
    _check_refs(arr, excluded)
    for ref in excluded:
        t, l, h, w = ref.bbox
        out[t : t + h, l : l + w] = blurred[t : t + h, l : l + w]
    return out


def blur_exclude(
    image: np.ndarray, excluded: list[SegmentRef], sigma: float
) -> np.ndarray:
    """Replace the excluded cells with their full-image Gaussian blur.

    Pixels outside the excluded union are returned untouched; the result is
    clamped to [0,1] and keeps the input's float32 layout.
    """
    arr = np.asarray(image, dtype=np.float32)
    if not excluded:
        return arr.copy()
    return composite_excluded(arr, blurred_for_exclusion(arr, sigma), excluded)


def crop_segment(image: np.ndarray, seg: SegmentRef) -> np.ndarray:
    """Exact pixel copy of the segment's bbox."""
    arr = np.asarray(image)
    _check_refs(arr, [seg])
    t, l, h, w = seg.bbox
    return arr[t : t + h, l : l + w].copy()
