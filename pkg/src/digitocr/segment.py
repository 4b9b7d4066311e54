"""Character isolation: components, bounding boxes, containment dedup, glyphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from digitocr.imagecore import ImageError, is_binary, is_gray, is_rgb, to_gray
from digitocr import preprocess as pp
from digitocr.labeling import label

__all__ = [
    "Box",
    "Component",
    "SegmentConfig",
    "PageStages",
    "find_components",
    "contains",
    "dedup_boxes",
    "sort_boxes",
    "draw_boxes",
    "extract_glyph",
    "area_resize",
    "run_stages",
    "segment_page",
    "format_boxes",
    "parse_boxes",
]

GLYPH_SIZE = 28
GLYPH_BODY = 20


class Box(NamedTuple):
    """Upper-left corner (x = column, y = row) plus size in pixels."""

    x: int
    y: int
    width: int
    height: int

    @property
    def right(self) -> int:
        return self.x + self.width

    @property
    def bottom(self) -> int:
        return self.y + self.height

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass
class Component:
    box: Box
    pixels: np.ndarray  # (n, 2) array of (row, col)

    @property
    def pixel_count(self) -> int:
        return len(self.pixels)


def find_components(img: np.ndarray, min_area: int = 9) -> list[Component]:
    """Maximal 8-connected foreground components with at least ``min_area`` pixels."""
    if not is_binary(img):
        raise ImageError("find_components expects a binary image")
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    labels, n = label(img, connectivity=8)
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    ids = labels[rows, cols]
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    starts = np.searchsorted(ids, np.arange(1, n + 2))
    out = []
    for i in range(n):
        a, b = starts[i], starts[i + 1]
        if b - a < min_area:
            continue
        r, c = rows[a:b], cols[a:b]
        y0, x0 = int(r.min()), int(c.min())
        box = Box(x0, y0, int(c.max()) - x0 + 1, int(r.max()) - y0 + 1)
        out.append(Component(box, np.stack([r, c], axis=1)))
    return out


def contains(outer: Box, inner: Box) -> bool:
    """Non-strict containment of ``inner`` in ``outer``."""
    return (outer.x <= inner.x and outer.y <= inner.y
            and outer.right >= inner.right and outer.bottom >= inner.bottom)


def dedup_boxes(boxes: Iterable[Sequence[int]]) -> list[Box]:
    """Collapse duplicates, then drop every box lying inside another box.

    Boxes that poke out of every larger box survive. Output is in reading
    order (see :func:`sort_boxes`).
    """
    distinct = {Box(*b) for b in boxes}
    # a container always has area >= its contents, so visiting big boxes
    # first means each box only needs checking against kept ones
    by_area = sorted(distinct, key=lambda b: (-b.area, b))
    kept: list[Box] = []
    for b in by_area:
        if not any(contains(k, b) for k in kept):
            kept.append(b)
    return sort_boxes(kept)


def sort_boxes(boxes: Iterable[Sequence[int]]) -> list[Box]:
    """Left to right, then top to bottom, then by width and height."""
    return sorted(Box(*b) for b in boxes)


def draw_boxes(img: np.ndarray, boxes: Iterable[Box], color=(255, 0, 0), thickness: int = 2) -> np.ndarray:
    """Copy of ``img`` with each box outline painted.

    The outline runs from (x, y) to (x + width, y + height) inclusive and
    grows inward by ``thickness``; anything off the image is clipped.
    """
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    if not is_rgb(img):
        raise ImageError("draw_boxes expects an rgb image")
    out = img.copy()
    h, w = img.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    for b in boxes:
        x0, y0, x1, y1 = b.x, b.y, b.x + b.width, b.y + b.height
        t = thickness
        # each side as a half-open rectangle, clipped
        for r0, r1, c0, c1 in (
            (y0, y0 + t, x0, x1 + 1),
            (y1 - t + 1, y1 + 1, x0, x1 + 1),
            (y0, y1 + 1, x0, x0 + t),
            (y0, y1 + 1, x1 - t + 1, x1 + 1),
        ):
            r0, r1 = max(r0, y0, 0), min(r1, h)
            c0, c1 = max(c0, x0, 0), min(c1, w)
            if r0 < r1 and c0 < c1:
                mask[r0:r1, c0:c1] = True
    out[mask] = np.asarray(color, dtype=np.uint8)
    return out


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix of source-pixel overlap fractions per output pixel."""
    scale = src / dst
    edges = np.arange(dst + 1) * scale
    lo, hi = edges[:-1, None], edges[1:, None]
    j = np.arange(src)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def area_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area-average resampling of a float image."""
    return _area_weights(img.shape[0], height) @ img @ _area_weights(img.shape[1], width).T


def extract_glyph(page: np.ndarray, box: Box) -> np.ndarray:
    """Crop ``box``, scale its longer side to 20 px and center it on a 28x28 canvas.

    ``page`` is a float image with bright ink in [0, 1].
    """
    h, w = page.shape
    x0, y0 = max(box.x, 0), max(box.y, 0)
    x1, y1 = min(box.x + box.width, w), min(box.y + box.height, h)
    if x1 <= x0 or y1 <= y0:
        raise ImageError(f"box {tuple(box)} is empty after clipping to {w}x{h}")
    crop = np.asarray(page[y0:y1, x0:x1], dtype=np.float64)
    ch, cw = crop.shape
    if ch >= cw:
        th, tw = GLYPH_BODY, max(1, int(np.floor(cw * GLYPH_BODY / ch + 0.5)))
    else:
        th, tw = max(1, int(np.floor(ch * GLYPH_BODY / cw + 0.5))), GLYPH_BODY
    scaled = np.clip(area_resize(crop, th, tw), 0.0, 1.0)
    glyph = np.zeros((GLYPH_SIZE, GLYPH_SIZE))
    r0, c0 = (GLYPH_SIZE - th) // 2, (GLYPH_SIZE - tw) // 2
    glyph[r0 : r0 + th, c0 : c0 + tw] = scaled
    return glyph


@dataclass(frozen=True)
class SegmentConfig:
    mean_shift: pp.MeanShiftParams | None = field(default_factory=pp.MeanShiftParams)
    median_kernel: int | None = 3
    canny: pp.CannyParams = field(default_factory=pp.CannyParams)
    min_area: int = 9


@dataclass
class PageStages:
    """Every intermediate image of the page chain, for debugging."""

    meanshift: np.ndarray
    median: np.ndarray
    normalized: np.ndarray  # float, paper bright, in [0, 1]
    edges: np.ndarray
    components: list[Component]
    boxes: list[Box]


def run_stages(page: np.ndarray, cfg: SegmentConfig = SegmentConfig()) -> PageStages:
    if not is_gray(page):
        page = to_gray(page)
    shifted = pp.mean_shift_filter(page, cfg.mean_shift) if cfg.mean_shift else page
    blurred = pp.median_blur(shifted, cfg.median_kernel) if cfg.median_kernel else shifted
    normalized = pp.minmax_normalize(blurred, pp.NormalizationParams(0.0, 1.0))
    edges = pp.canny(to_gray(normalized), cfg.canny)
    comps = find_components(edges, cfg.min_area)
    boxes = dedup_boxes(c.box for c in comps)
    return PageStages(shifted, blurred, normalized, edges, comps, boxes)


def segment_page(page: np.ndarray, cfg: SegmentConfig = SegmentConfig()) -> list[tuple[Box, np.ndarray]]:
    """Boxes in reading order, each paired with its 28x28 glyph."""
    st = run_stages(page, cfg)
    ink = 1.0 - st.normalized
    return [(b, extract_glyph(ink, b)) for b in st.boxes]


def format_boxes(boxes: Iterable[Box]) -> str:
    return "".join(f"{b.x} {b.y} {b.width} {b.height}\n" for b in boxes)


def parse_boxes(text: str) -> list[Box]:
    return [Box(*map(int, line.split())) for line in text.splitlines() if line.strip()]
