"""Noise cancellation and binarization filters for page images.

The page chain runs mean-shift flattening, a median blur for salt and
pepper noise, min-max normalization, and finally Canny edge detection (or a
plain threshold when edges are not wanted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from digitocr.imagecore import ImageError, is_float, is_gray
from digitocr.labeling import label

__all__ = [
    "NormalizationParams",
    "MeanShiftParams",
    "CannyParams",
    "minmax_normalize",
    "mean_shift_filter",
    "median_blur",
    "threshold_binary",
    "canny",
    "gaussian_kernel",
    "sobel_gradients",
    "non_max_suppression",
    "hysteresis",
]


@dataclass(frozen=True)
class NormalizationParams:
    new_min: float = 0.0
    new_max: float = 1.0

    def __post_init__(self):
        if not self.new_min < self.new_max:
            raise ValueError(f"new_min {self.new_min} must be below new_max {self.new_max}")


@dataclass(frozen=True)
class MeanShiftParams:
    spatial_radius: int = 21
    color_radius: float = 111
    max_iterations: int = 5
    convergence_eps: float = 1.0

    def __post_init__(self):
        if self.spatial_radius < 1:
            raise ValueError("spatial_radius must be >= 1")
        if self.color_radius < 0:
            raise ValueError("color_radius must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_eps < 0:
            raise ValueError("convergence_eps must be >= 0")


@dataclass(frozen=True)
class CannyParams:
    low_threshold: float = 50.0
    high_threshold: float = 150.0
    gaussian_sigma: float = 1.4
    gaussian_kernel_size: int = 5

    def __post_init__(self):
        if not 0 <= self.low_threshold <= self.high_threshold:
            raise ValueError("need 0 <= low_threshold <= high_threshold")
        if self.gaussian_kernel_size < 3 or self.gaussian_kernel_size % 2 == 0:
            raise ValueError("gaussian_kernel_size must be odd and >= 3")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")


def _require_2d(img: np.ndarray) -> None:
    if not (is_gray(img) or is_float(img)):
        raise ImageError(f"expected a gray or float image, got {img.shape} {img.dtype}")


def minmax_normalize(img: np.ndarray, p: NormalizationParams = NormalizationParams()) -> np.ndarray:
    """Linearly map the image's own [min, max] onto [p.new_min, p.new_max].

    A constant image maps to ``new_min`` everywhere.
    """
    _require_2d(img)
    v = img.astype(np.float64)
    lo, hi = v.min(), v.max()
    if lo == hi:
        return np.full(v.shape, float(p.new_min))
    out = (v - lo) / (hi - lo) * (p.new_max - p.new_min) + p.new_min
    # pin the endpoints against rounding
    out[v == lo] = p.new_min
    out[v == hi] = p.new_max
    return out


def _window_histograms(idx: np.ndarray, weights: np.ndarray, radius: int,
                       r0: int, r1: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative windowed level counts and level sums for rows r0..r1.

    ``idx`` holds per-pixel level indices. Entry ``[k, r, c]`` of the
    results counts (or sums the intensities of) pixels with level index
    ``< k`` inside the clipped square window around ``(r0 + r, c)``.
    """
    h, w = idx.shape
    k = len(weights)
    e0, e1 = max(0, r0 - radius), min(h, r1 + radius)
    band = idx[e0:e1]
    onehot = np.zeros((k, e1 - e0, w), dtype=np.int32)
    rr, cc = np.indices(band.shape)
    onehot[band, rr, cc] = 1
    integral = np.zeros((k, e1 - e0 + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(onehot, axis=1), axis=2, out=integral[:, 1:, 1:])

    rows = np.arange(r0, r1)
    top = np.clip(rows - radius, 0, h) - e0
    bot = np.clip(rows + radius + 1, 0, h) - e0
    cols = np.arange(w)
    left = np.clip(cols - radius, 0, w)
    right = np.clip(cols + radius + 1, 0, w)
    counts = (integral[:, bot][:, :, right] - integral[:, top][:, :, right]
              - integral[:, bot][:, :, left] + integral[:, top][:, :, left])
    cum_count = np.zeros((k + 1,) + counts.shape[1:], dtype=np.int64)
    np.cumsum(counts, axis=0, out=cum_count[1:])
    cum_sum = np.zeros_like(cum_count)
    np.cumsum(counts * weights[:, None, None], axis=0, out=cum_sum[1:])
    return cum_count, cum_sum


def mean_shift_filter(img: np.ndarray, p: MeanShiftParams = MeanShiftParams()) -> np.ndarray:
    """Single-level gray mean shift.

    Each pixel starts at its own intensity ``c`` and repeatedly moves to the
    mean intensity of the input pixels within Chebyshev distance
    ``spatial_radius`` whose value lies within ``color_radius`` of ``c``.
    Iteration stops after ``max_iterations`` or once a move is smaller than
    ``convergence_eps``. Results are rounded half up.

    Window statistics come from per-level integral images, so the cost per
    iteration does not grow with the window size.
    """
    if not is_gray(img):
        raise ImageError("mean_shift_filter expects a gray image")
    h, w = img.shape
    levels = np.unique(img).astype(np.int64)
    fl = levels.astype(np.float64)
    idx = np.searchsorted(levels, img.astype(np.int64))
    sp, sr = p.spatial_radius, float(p.color_radius)

    # bound the working set of the per-level integral images
    budget = 4_000_000
    per_row = (len(levels) + 1) * (w + 1)
    band = max(2 * sp + 1, budget // per_row - 2 * sp)
    out = np.empty((h, w), dtype=np.uint8)
    for r0 in range(0, h, band):
        r1 = min(h, r0 + band)
        cum_count, cum_sum = _window_histograms(idx, levels, sp, r0, r1)
        c = img[r0:r1].astype(np.float64)
        active = np.ones(c.shape, dtype=bool)
        for _ in range(p.max_iterations):
            lo = np.searchsorted(fl, c - sr, side="left")[None]
            hi = np.searchsorted(fl, c + sr, side="right")[None]
            n = (np.take_along_axis(cum_count, hi, 0) - np.take_along_axis(cum_count, lo, 0))[0]
            s = (np.take_along_axis(cum_sum, hi, 0) - np.take_along_axis(cum_sum, lo, 0))[0]
            new = np.where(n > 0, s / np.maximum(n, 1), c)
            moved = np.abs(new - c)
            c = np.where(active, new, c)
            active &= moved >= p.convergence_eps
            if not active.any():
                break
        out[r0:r1] = np.clip(np.floor(c + 0.5), 0, 255).astype(np.uint8)
    return out


def median_blur(img: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Median of each kernel x kernel neighborhood, edges replicated."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 3, got {kernel}")
    _require_2d(img)
    r = kernel // 2
    padded = np.pad(img, r, mode="edge")
    windows = sliding_window_view(padded, (kernel, kernel)).reshape(img.shape + (kernel * kernel,))
    mid = kernel * kernel // 2
    return np.partition(windows, mid, axis=-1)[..., mid].astype(img.dtype)


def threshold_binary(img: np.ndarray, t: float) -> np.ndarray:
    """Foreground (True) where the pixel is darker than ``t``."""
    _require_2d(img)
    return img < t


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _convolve_separable(img: np.ndarray, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    """Correlate with ``ky`` down columns and ``kx`` along rows, replicating edges."""
    rx, ry = len(kx) // 2, len(ky) // 2
    padded = np.pad(img.astype(np.float64), ((ry, ry), (rx, rx)), mode="edge")
    h, w = img.shape
    tmp = np.zeros((h + 2 * ry, w))
    for i, k in enumerate(kx):
        tmp += k * padded[:, i : i + w]
    out = np.zeros((h, w))
    for i, k in enumerate(ky):
        out += k * tmp[i : i + h]
    return out


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives (x to the right, y downward)."""
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([-1.0, 0.0, 1.0])
    gx = _convolve_separable(img, diff, smooth)
    gy = _convolve_separable(img, smooth, diff)
    return gx, gy


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that peak along their gradient direction (4 bins).

    A pixel must beat the neighbor behind it strictly and at least tie the
    one ahead, which thins flat two-pixel ridges to a single pixel.
    """
    h, w = mag.shape
    m = np.pad(mag, 1)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # (dr, dc) of the neighbor "ahead" along the gradient
    bins = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1)),
        ((angle >= 22.5) & (angle < 67.5), (1, 1)),
        ((angle >= 67.5) & (angle < 112.5), (1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (1, -1)),
    ]
    keep = np.zeros((h, w), dtype=bool)
    for sel, (dr, dc) in bins:
        ahead = m[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        behind = m[1 - dr : 1 - dr + h, 1 - dc : 1 - dc + w]
        keep |= sel & (mag > behind) & (mag >= ahead)
    return keep & (mag > 0)


def hysteresis(mag: np.ndarray, candidates: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep weak pixels (>= low) only when 8-connected to a strong one (>= high)."""
    weak = candidates & (mag >= low)
    strong = weak & (mag >= high)
    labels, n = label(weak, connectivity=8)
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[labels[strong]] = True
    seeded[0] = False
    return seeded[labels]


def canny(img: np.ndarray, p: CannyParams = CannyParams()) -> np.ndarray:
    """Canny edges of a gray image; True marks an edge pixel."""
    _require_2d(img)
    g = gaussian_kernel(p.gaussian_kernel_size, p.gaussian_sigma)
    smooth = _convolve_separable(img, g, g)
    gx, gy = sobel_gradients(smooth)
    mag = np.hypot(gx, gy)
    thin = non_max_suppression(mag, gx, gy)
    return hysteresis(mag, thin, p.low_threshold, p.high_threshold)
