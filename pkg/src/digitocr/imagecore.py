"""Pixel-grid conventions and binary PNM (P5/P6) file I/O.

Images are plain numpy arrays; the dtype and shape carry the image kind:

* gray   -- ``uint8``, shape ``(height, width)``, intensities 0-255
* float  -- ``float64``, shape ``(height, width)``, finite reals
* rgb    -- ``uint8``, shape ``(height, width, 3)``
* binary -- ``bool``, shape ``(height, width)``, True is foreground

The constructors below validate a flat row-major pixel sequence against
the stated dimensions and return the corresponding array.
"""

from __future__ import annotations

import re
from typing import Sequence

import numpy as np

__all__ = [
    "ImageError",
    "PnmFormatError",
    "gray_image",
    "float_image",
    "rgb_image",
    "binary_image",
    "is_gray",
    "is_float",
    "is_rgb",
    "is_binary",
    "load_pnm",
    "save_pnm",
    "read_pnm",
    "write_pnm",
    "rgb_to_gray",
    "gray_to_rgb",
    "to_gray",
]


class ImageError(ValueError):
    """Raised when pixel data does not describe a valid image."""


class PnmFormatError(ImageError):
    """Malformed PNM data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _check_dims(width: int, height: int, count: int, per_pixel: int = 1) -> None:
    if width < 1 or height < 1:
        raise ImageError(f"image dimensions must be positive, got {width}x{height}")
    if count != width * height * per_pixel:
        raise ImageError(
            f"{count} values do not fill a {width}x{height} image"
            + (f" with {per_pixel} channels" if per_pixel > 1 else "")
        )


def gray_image(width: int, height: int, pixels: Sequence[int]) -> np.ndarray:
    arr = np.asarray(pixels).ravel()
    _check_dims(width, height, arr.size)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ImageError("gray intensities must lie in 0..255")
    return arr.astype(np.uint8).reshape(height, width)


def float_image(width: int, height: int, pixels: Sequence[float]) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float64).ravel()
    _check_dims(width, height, arr.size)
    if not np.all(np.isfinite(arr)):
        raise ImageError("float image values must be finite")
    return arr.reshape(height, width)


def rgb_image(width: int, height: int, pixels: Sequence[tuple[int, int, int]]) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2 or arr.shape[1] != 3:
        if arr.size % 3:
            raise ImageError("rgb pixels must be (r, g, b) triples")
        arr = arr.reshape(-1, 3)
    _check_dims(width, height, arr.shape[0])
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ImageError("rgb channels must lie in 0..255")
    return arr.astype(np.uint8).reshape(height, width, 3)


def binary_image(width: int, height: int, pixels: Sequence[int]) -> np.ndarray:
    arr = np.asarray(pixels).ravel()
    _check_dims(width, height, arr.size)
    if not np.all((arr == 0) | (arr == 1)):
        raise ImageError("binary pixels must be 0 or 1")
    return arr.astype(bool).reshape(height, width)


def is_gray(img: np.ndarray) -> bool:
    return img.ndim == 2 and img.dtype == np.uint8


def is_float(img: np.ndarray) -> bool:
    return img.ndim == 2 and np.issubdtype(img.dtype, np.floating)


def is_rgb(img: np.ndarray) -> bool:
    return img.ndim == 3 and img.shape[2] == 3 and img.dtype == np.uint8


def is_binary(img: np.ndarray) -> bool:
    return img.ndim == 2 and img.dtype == bool


_TOKEN = re.compile(rb"\S+")


def _header_tokens(data: bytes, count: int) -> tuple[list[tuple[bytes, int]], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens with their offsets and the offset of the raster.
    """
    tokens: list[tuple[bytes, int]] = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise PnmFormatError("truncated header", pos)
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
            continue
        m = _TOKEN.match(data, pos)
        tok = m.group(0)
        if b"#" in tok:
            tok = tok[: tok.index(b"#")]
        tokens.append((tok, pos))
        pos += len(tok)
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PnmFormatError("missing whitespace after maxval", pos)
    return tokens, pos + 1


def load_pnm(data: bytes) -> np.ndarray:
    """Decode a binary PNM file: P5 gives a gray image, P6 an rgb image.

    Files with maxval below 255 are rescaled to the full 0-255 range.
    """
    if len(data) < 2:
        raise PnmFormatError("file too short for a PNM magic number", 0)
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PnmFormatError(f"unsupported magic {magic!r}, expected P5 or P6", 0)

    tokens, raster_at = _header_tokens(data, 3)
    values = []
    for name, (tok, off) in zip(("width", "height", "maxval"), tokens):
        if not tok.isdigit():
            raise PnmFormatError(f"{name} is not a decimal integer: {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PnmFormatError("image dimensions must be positive", tokens[0][1])
    if not 1 <= maxval <= 255:
        raise PnmFormatError(f"maxval {maxval} outside 1..255", tokens[2][1])

    need = width * height * channels
    body = data[raster_at : raster_at + need]
    if len(body) < need:
        raise PnmFormatError(
            f"raster truncated: need {need} bytes, found {len(body)}", raster_at + len(body)
        )
    arr = np.frombuffer(body, dtype=np.uint8)
    if maxval != 255:
        over = np.flatnonzero(arr > maxval)
        if over.size:
            raise PnmFormatError(f"sample exceeds maxval {maxval}", raster_at + int(over[0]))
        arr = np.floor(arr.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape).copy()


def save_pnm(img: np.ndarray) -> bytes:
    """Encode a gray, binary or rgb image with a canonical header."""
    if is_binary(img):
        raster = np.where(img, 255, 0).astype(np.uint8)
        magic = b"P5"
    elif is_gray(img):
        raster, magic = img, b"P5"
    elif is_rgb(img):
        raster, magic = img, b"P6"
    else:
        raise ImageError(f"cannot encode array of shape {img.shape} and dtype {img.dtype}")
    h, w = raster.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(raster).tobytes()


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return load_pnm(f.read())


def write_pnm(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(save_pnm(img))


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance, rounded half up."""
    rgb = img.astype(np.float64)
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(lum + 0.5), 0, 255).astype(np.uint8)


def gray_to_rgb(img: np.ndarray) -> np.ndarray:
    if is_binary(img):
        img = np.where(img, 255, 0).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Coerce any supported image kind to gray; floats are assumed in [0, 1]."""
    if is_rgb(img):
        return rgb_to_gray(img)
    if is_binary(img):
        return np.where(img, 255, 0).astype(np.uint8)
    if is_gray(img):
        return img
    if is_float(img):
        return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    raise ImageError(f"unsupported image array {img.shape} {img.dtype}")
