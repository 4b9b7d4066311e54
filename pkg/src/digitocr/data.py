"""Datasets: MNIST IDX files, user page directories and synthetic pages."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from digitocr.imagecore import ImageError, read_pnm, to_gray
from digitocr.segment import GLYPH_SIZE, Box, SegmentConfig, segment_page

log = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "IdxFormatError",
    "Dataset",
    "parse_idx_images",
    "parse_idx_labels",
    "encode_idx_images",
    "encode_idx_labels",
    "load_mnist",
    "ingest_custom_dir",
    "render_digit",
    "PageLayout",
    "PageNoise",
    "SyntheticPage",
    "make_synthetic_page",
    "shuffle_split",
    "format_truth",
]

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    """Dataset content is missing, inconsistent or malformed."""


class IdxFormatError(DataError):
    pass


@dataclass
class Dataset:
    """Glyphs (n, 28, 28) in [0, 1] with digit labels (n,)."""

    images: np.ndarray
    labels: np.ndarray
    source: str = ""
    page_counts: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(-1, GLYPH_SIZE, GLYPH_SIZE)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels must be digits 0-9")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("glyph values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.images[i], int(self.labels[i])

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.source)

    @staticmethod
    def concat(*parts: "Dataset") -> "Dataset":
        return Dataset(
            np.concatenate([p.images for p in parts]) if parts else np.zeros((0, 28, 28)),
            np.concatenate([p.labels for p in parts]) if parts else np.zeros(0),
            "+".join(p.source for p in parts if p.source),
        )


def _idx_header(data: bytes, magic: int, ndim: int) -> tuple[list[int], int]:
    if len(data) < 4:
        raise IdxFormatError(f"{len(data)} bytes is too short for an IDX magic number")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise IdxFormatError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndim
    if len(data) < end:
        raise IdxFormatError("truncated IDX dimension header")
    dims = list(struct.unpack(f">{ndim}I", data[4:end]))
    need = int(np.prod(dims, dtype=np.int64))
    if len(data) - end != need:
        raise IdxFormatError(
            f"IDX dims {dims} need {need} payload bytes, found {len(data) - end}"
        )
    return dims, end


def parse_idx_images(data: bytes) -> np.ndarray:
    """Images from an IDX3 file as a uint8 array of shape (count, 28, 28)."""
    dims, start = _idx_header(data, IDX_IMAGES, 3)
    if dims[1:] != [GLYPH_SIZE, GLYPH_SIZE]:
        raise IdxFormatError(f"expected 28x28 images, got {dims[1]}x{dims[2]}")
    return np.frombuffer(data, dtype=np.uint8, offset=start).reshape(dims).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    dims, start = _idx_header(data, IDX_LABELS, 1)
    labels = np.frombuffer(data, dtype=np.uint8, offset=start).astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at index {bad[0]} is not a digit")
    return labels


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    return struct.pack(">IIII", IDX_IMAGES, n, h, w) + images.tobytes()


def encode_idx_labels(labels: Sequence[int]) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS, len(labels)) + labels.tobytes()


_MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def _read_maybe_gz(directory: Path, names: Sequence[str]) -> bytes:
    for name in names:
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.is_file():
                raw = candidate.read_bytes()
                return gzip.decompress(raw) if candidate.suffix == ".gz" else raw
    raise FileNotFoundError(f"no {names[0]}[.gz] in {directory}")


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """(train, test) from the four standard IDX files, scaled by 1/255."""
    directory = Path(directory)
    parts = {key: _read_maybe_gz(directory, names) for key, names in _MNIST_FILES.items()}
    out = []
    for split in ("train", "test"):
        images = parse_idx_images(parts[f"{split}_images"])
        labels = parse_idx_labels(parts[f"{split}_labels"])
        if len(images) != len(labels):
            raise DataError(f"MNIST {split}: {len(images)} images but {len(labels)} labels")
        out.append(Dataset(images.astype(np.float64) / 255.0, labels, f"mnist-{split}"))
    return out[0], out[1]


def ingest_custom_dir(directory, cfg: SegmentConfig = SegmentConfig()) -> Dataset:
    """Segment every ``<directory>/<digit>/*.pgm`` page, labeling glyphs by folder.

    Pages are visited in sorted path order. Folders that are not a single
    digit are skipped with a warning; pages that fail to load are recorded
    in ``errors`` and skipped.
    """
    directory = Path(directory)
    images, labels = [], []
    counts: dict[str, int] = {}
    errors: list[str] = []
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        if not (len(sub.name) == 1 and sub.name.isdigit()):
            log.warning("skipping %s: folder name is not a digit", sub)
            continue
        digit = int(sub.name)
        for page_path in sorted(sub.glob("*.pgm")):
            try:
                page = to_gray(read_pnm(page_path))
            except (OSError, ImageError) as exc:
                log.error("cannot read %s: %s", page_path, exc)
                errors.append(f"{page_path}: {exc}")
                continue
            found = segment_page(page, cfg)
            counts[str(page_path)] = len(found)
            log.info("%s: %d glyphs", page_path, len(found))
            for _, glyph in found:
                images.append(glyph)
                labels.append(digit)
    ds = Dataset(np.array(images).reshape(-1, GLYPH_SIZE, GLYPH_SIZE), np.array(labels, dtype=np.int64),
                 f"custom:{directory}")
    ds.page_counts = counts
    ds.errors = errors
    return ds


# Stroke skeletons on a unit square (x right, y down). Each digit is a list
# of polylines; closed loops repeat their first point.
def _arc(cx, cy, rx, ry, a0, a1, n=24):
    t = np.deg2rad(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [_arc(0.5, 0.5, 0.32, 0.48, 0, 360, 40)],
    1: [[(0.3, 0.2), (0.55, 0.0), (0.55, 1.0)]],
    2: [_arc(0.5, 0.28, 0.32, 0.28, 200, 360, 16) + [(0.82, 0.35), (0.18, 1.0), (0.85, 1.0)]],
    3: [_arc(0.48, 0.26, 0.3, 0.26, 200, 450, 20), _arc(0.48, 0.74, 0.34, 0.26, 270, 520, 20)],
    4: [[(0.65, 1.0), (0.65, 0.0), (0.1, 0.7), (0.9, 0.7)]],
    5: [[(0.82, 0.0), (0.25, 0.0), (0.2, 0.45)] + _arc(0.5, 0.68, 0.33, 0.32, 225, 500, 22)],
    6: [[(0.72, 0.0), (0.3, 0.35)] + _arc(0.5, 0.7, 0.32, 0.3, 200, 560, 32)],
    7: [[(0.12, 0.0), (0.88, 0.0), (0.38, 1.0)]],
    8: [_arc(0.5, 0.25, 0.26, 0.25, 90, 450, 28), _arc(0.5, 0.73, 0.32, 0.27, -90, 270, 30)],
    9: [_arc(0.5, 0.3, 0.32, 0.3, 20, 380, 32) + [(0.82, 0.35), (0.7, 1.0)]],
}


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = np.zeros_like(px) if denom == 0 else np.clip(((px - ax) * dx + (py - ay) * dy) / denom, 0, 1)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_digit(digit: int, rng: np.random.Generator | None = None, size: int = GLYPH_SIZE,
                 stroke: float | None = None) -> np.ndarray:
    """Antialiased stroke rendering of ``digit`` as a bright-ink glyph.

    The digit body spans 20/28 of the canvas; ``rng`` adds a random slant,
    aspect change and stroke width. With ``rng=None`` the rendering is the
    plain skeleton.
    """
    if digit not in _STROKES:
        raise ValueError(f"not a digit: {digit}")
    scale = size / GLYPH_SIZE
    if rng is None:
        shear, sx, width = 0.0, 0.75, 2.4 if stroke is None else stroke
    else:
        shear = rng.uniform(-0.2, 0.2)
        sx = rng.uniform(0.6, 0.9)
        width = rng.uniform(2.0, 3.0) if stroke is None else stroke
    body = 18.0 * scale
    width *= scale
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dist = np.full((size, size), np.inf)
    for line in _STROKES[digit]:
        pts = np.array(line, dtype=np.float64)
        # unit square -> canvas, slanting around the middle row
        cx = size / 2 + (pts[:, 0] - 0.5) * body * sx + shear * (0.5 - pts[:, 1]) * body
        cy = size / 2 + (pts[:, 1] - 0.5) * body
        for i in range(len(pts) - 1):
            dist = np.minimum(dist, _segment_distance(xs, ys, cx[i], cy[i], cx[i + 1], cy[i + 1]))
    return np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)


def _bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Pixel-center aligned bilinear resampling to size x size."""
    n = img.shape[0]
    pos = np.clip((np.arange(size) + 0.5) * n / size - 0.5, 0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    f = pos - lo
    rows = img[lo] * (1 - f)[:, None] + img[hi] * f[:, None]
    return rows[:, lo] * (1 - f)[None, :] + rows[:, hi] * f[None, :]


@dataclass(frozen=True)
class PageLayout:
    scale: int = 2          # page pixels per glyph pixel
    spacing: int = 6        # page pixels between neighbouring glyph canvases
    margin: int = 16
    max_width: int = 8192
    jitter: int = 0         # max vertical offset per glyph, page pixels


@dataclass(frozen=True)
class PageNoise:
    salt_pepper: float = 0.0      # fraction of pixels forced to 0 or 255
    margin_lines: int = 0         # faint horizontal rules
    line_value: int = 200


@dataclass
class SyntheticPage:
    page: np.ndarray
    clean: np.ndarray
    boxes: list[Box]
    labels: list[int]


def make_synthetic_page(glyphs: Sequence[np.ndarray], labels: Sequence[int],
                        layout: PageLayout = PageLayout(), noise: PageNoise = PageNoise(),
                        seed: int = 0) -> SyntheticPage:
    """Render glyphs left to right as dark ink on a white page.

    Ground-truth boxes are the tight extent of each glyph's ink in page
    coordinates.
    """
    if len(glyphs) == 0:
        raise ValueError("need at least one glyph")
    if len(glyphs) != len(labels):
        raise ValueError("glyphs and labels differ in length")
    rng = np.random.default_rng(seed)
    cell = GLYPH_SIZE * layout.scale
    n = len(glyphs)
    width = 2 * layout.margin + n * cell + (n - 1) * layout.spacing
    height = 2 * layout.margin + cell + 2 * layout.jitter
    if width > layout.max_width:
        raise ValueError(f"{n} glyphs need {width} px, page limit is {layout.max_width}")

    ink = np.zeros((height, width))
    boxes = []
    for i, g in enumerate(glyphs):
        big = np.clip(_bilinear_resize(np.asarray(g, dtype=np.float64), cell), 0, 1)
        x = layout.margin + i * (cell + layout.spacing)
        y = layout.margin + layout.jitter + (int(rng.integers(-layout.jitter, layout.jitter + 1)) if layout.jitter else 0)
        ink[y : y + cell, x : x + cell] = np.maximum(ink[y : y + cell, x : x + cell], big)
        level = np.floor(big * 255 + 0.5)
        r, c = np.nonzero(level > 0)
        if r.size == 0:
            raise ValueError(f"glyph {i} has no ink")
        boxes.append(Box(x + int(c.min()), y + int(r.min()), int(c.max() - c.min()) + 1, int(r.max() - r.min()) + 1))

    clean = (255 - np.floor(ink * 255 + 0.5)).astype(np.uint8)
    for k in range(noise.margin_lines):
        row = layout.margin // 2 if k == 0 else int(rng.integers(0, height))
        clean[row] = np.minimum(clean[row], noise.line_value)

    page = clean.copy()
    if noise.salt_pepper > 0:
        hit = rng.random(page.shape) < noise.salt_pepper
        salt = rng.random(page.shape) < 0.5
        page[hit & salt] = 255
        page[hit & ~salt] = 0
    return SyntheticPage(page, clean, boxes, [int(l) for l in labels])


def format_truth(page: SyntheticPage) -> str:
    return "".join(f"{l} {b.x} {b.y} {b.width} {b.height}\n" for l, b in zip(page.labels, page.boxes))


def shuffle_split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle followed by a prefix/suffix split."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(data))
    cut = int(np.floor(train_fraction * len(data) + 0.5))
    return data.subset(order[:cut]), data.subset(order[cut:])
