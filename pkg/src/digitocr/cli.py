"""Command-line interface: ``digitocr {train,eval,segment,recognize,preprocess,synth}``.

Exit codes: 0 success, 2 bad usage, 3 bad or missing input data, 4 I/O
failure while writing results.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from digitocr import nn
from digitocr import preprocess as pp
from digitocr.data import (DataError, Dataset, PageLayout, PageNoise, format_truth,
                           ingest_custom_dir, load_mnist, make_synthetic_page, render_digit)
from digitocr.imagecore import ImageError, gray_to_rgb, load_pnm, save_pnm, to_gray
from digitocr.segment import (GLYPH_SIZE, Box, SegmentConfig, draw_boxes, extract_glyph,
                              format_boxes, run_stages)

log = logging.getLogger("digitocr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4


class InputError(Exception):
    """Wraps failures while reading inputs (exit 3)."""


class OutputError(Exception):
    """Wraps failures while writing outputs (exit 4)."""


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _read_image(path) -> np.ndarray:
    try:
        return load_pnm(Path(path).read_bytes())
    except (OSError, ImageError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def _read_model(path) -> nn.Model:
    try:
        return nn.load_model(Path(path).read_bytes())
    except (OSError, nn.ModelFormatError) as exc:
        raise InputError(f"cannot read model {path}: {exc}") from exc


def _load_mnist(path) -> tuple[Dataset, Dataset]:
    try:
        return load_mnist(path)
    except (OSError, DataError) as exc:
        raise InputError(f"cannot load MNIST from {path}: {exc}") from exc


def _ingest(path, cfg: SegmentConfig) -> Dataset:
    try:
        return ingest_custom_dir(path, cfg)
    except OSError as exc:
        raise InputError(f"cannot ingest {path}: {exc}") from exc


def _segment_config(args) -> SegmentConfig:
    ms = None if args.no_meanshift else pp.MeanShiftParams(args.spatial_radius, args.color_radius)
    return SegmentConfig(
        mean_shift=ms,
        median_kernel=args.median_kernel or None,
        canny=pp.CannyParams(args.canny_low, args.canny_high),
        min_area=args.min_area,
    )


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    train_set, _ = _load_mnist(args.mnist_dir)
    if args.limit:
        train_set = train_set.subset(slice(0, args.limit))
    if args.custom_dir:
        custom = _ingest(args.custom_dir, _segment_config(args))
        log.info("custom pages contributed %d glyphs", len(custom))
        train_set = Dataset.concat(train_set, custom)
    cfg = nn.TrainConfig(args.lr, args.epochs, args.batch, args.seed)
    model = nn.init_model((GLYPH_SIZE * GLYPH_SIZE, *args.hidden, 10), seed=args.seed,
                          hidden_activation=args.activation, use_bias=args.bias)
    model, _ = nn.train(model, train_set, cfg, on_epoch=lambda m: print(m, flush=True))
    _atomic_write(args.out, nn.save_model(model))
    return EXIT_OK


def format_confusion(confusion: np.ndarray) -> str:
    width = max(5, len(str(confusion.max())) + 1)
    head = "true\\pred" + "".join(f"{d:>{width}}" for d in range(confusion.shape[1]))
    rows = [f"{t:>9}" + "".join(f"{v:>{width}}" for v in row) for t, row in enumerate(confusion)]
    return "\n".join([head, *rows])


def cmd_eval(args) -> int:
    model = _read_model(args.model)
    if args.custom_dir:
        data = _ingest(args.custom_dir, _segment_config(args))
    else:
        _, data = _load_mnist(args.mnist_dir)
    if len(data) == 0:
        raise InputError("evaluation set is empty")
    acc, confusion = nn.evaluate(model, data)
    print(f"accuracy {acc:.4f}")
    print(format_confusion(confusion))
    return EXIT_OK


def cmd_segment(args) -> int:
    page = to_gray(_read_image(args.input))
    st = run_stages(page, _segment_config(args))
    ink = 1.0 - st.normalized
    outputs = {}
    for i, box in enumerate(st.boxes):
        glyph = extract_glyph(ink, box)
        outputs[Path(args.out_dir) / f"glyph_{i:03d}.pgm"] = save_pnm(to_gray(glyph))
    outputs[Path(args.out_dir) / "boxes.txt"] = format_boxes(st.boxes).encode()
    if args.debug_dir:
        d = Path(args.debug_dir)
        outputs[d / "meanshift.pgm"] = save_pnm(st.meanshift)
        outputs[d / "median.pgm"] = save_pnm(st.median)
        outputs[d / "normalized.pgm"] = save_pnm(to_gray(st.normalized))
        outputs[d / "canny.pgm"] = save_pnm(st.edges)
        outputs[d / "boxes.ppm"] = save_pnm(draw_boxes(gray_to_rgb(page), st.boxes, (255, 0, 0), 2))
    for path, blob in outputs.items():
        _atomic_write(path, blob)
    print(f"{len(st.boxes)} glyphs")
    return EXIT_OK


def glyph_from_image(img: np.ndarray) -> np.ndarray:
    """Turn a single-character image into a network-ready glyph.

    Polarity is guessed from the border: a dark border means bright ink.
    A 28x28 image is taken as already framed and only rescaled to [0, 1].
    """
    gray = to_gray(img).astype(np.float64)
    border = np.concatenate([gray[0], gray[-1], gray[:, 0], gray[:, -1]])
    bright_ink = border.mean() < 128
    if gray.shape == (GLYPH_SIZE, GLYPH_SIZE):
        g = gray / 255.0
        return g if bright_ink else 1.0 - g
    norm = pp.minmax_normalize(to_gray(img))
    ink = norm if bright_ink else 1.0 - norm
    rows, cols = np.nonzero(ink > 0.5)
    if rows.size == 0:
        raise InputError("no ink found in the input image")
    box = Box(int(cols.min()), int(rows.min()), int(cols.max() - cols.min()) + 1,
              int(rows.max() - rows.min()) + 1)
    return extract_glyph(ink, box)


def format_prediction(digit: int, probs: np.ndarray) -> str:
    lines = [f"Probability Distribution for {d} {float(p)!r}" for d, p in enumerate(probs)]
    lines.append(f"The Predicted Value is {digit}")
    return "\n".join(lines)


def cmd_recognize(args) -> int:
    model = _read_model(args.model)
    img = _read_image(args.input)
    if args.page:
        st = run_stages(to_gray(img), _segment_config(args))
        ink = 1.0 - st.normalized
        glyphs = [(b, extract_glyph(ink, b)) for b in st.boxes]
    else:
        glyphs = [(None, glyph_from_image(img))]
    for box, glyph in glyphs:
        if box is not None:
            log.info("glyph at %d %d %d %d", *box)
        digit, probs = nn.predict(model, glyph)
        print(format_prediction(digit, probs))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    img = to_gray(_read_image(args.input))
    if args.stage == "normalize":
        out = to_gray(pp.minmax_normalize(img, pp.NormalizationParams(args.new_min, args.new_max)) / 255.0)
    elif args.stage == "meanshift":
        out = pp.mean_shift_filter(img, pp.MeanShiftParams(args.spatial_radius, args.color_radius))
    elif args.stage == "median":
        out = pp.median_blur(img, args.kernel)
    elif args.stage == "threshold":
        out = pp.threshold_binary(img, args.threshold)
    else:
        out = pp.canny(img, pp.CannyParams(args.canny_low, args.canny_high))
    _atomic_write(args.out, save_pnm(out))
    return EXIT_OK


def cmd_synth(args) -> int:
    digits = [int(c) for c in args.digits]
    rng = np.random.default_rng(args.seed)
    glyphs = [render_digit(d, rng) for d in digits]
    page = make_synthetic_page(glyphs, digits, PageLayout(scale=args.scale, jitter=args.jitter),
                               PageNoise(salt_pepper=args.noise, margin_lines=args.lines), seed=args.seed)
    _atomic_write(args.out, save_pnm(page.page))
    if args.truth:
        _atomic_write(args.truth, format_truth(page).encode())
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _odd_kernel(text: str) -> int:
    k = int(text)
    if k < 3 or k % 2 == 0:
        raise argparse.ArgumentTypeError("kernel must be odd and >= 3")
    return k


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _digit_string(text: str) -> str:
    if not text or not text.isdigit():
        raise argparse.ArgumentTypeError("expected a string of digits such as 30851")
    return text


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("segmentation pipeline")
    g.add_argument("--no-meanshift", action="store_true", help="skip mean-shift filtering")
    g.add_argument("--spatial-radius", type=_positive_int, default=21, help="mean-shift spatial radius")
    g.add_argument("--color-radius", type=float, default=111.0, help="mean-shift color radius")
    g.add_argument("--median-kernel", type=int, default=3, help="median kernel size, 0 to skip")
    g.add_argument("--canny-low", type=float, default=50.0, help="Canny low threshold")
    g.add_argument("--canny-high", type=float, default=150.0, help="Canny high threshold")
    g.add_argument("--min-area", type=_positive_int, default=9, help="smallest component kept, in pixels")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="digitocr", description="Handwritten digit OCR", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network on MNIST (plus optional custom pages)", formatter_class=fmt)
    p.add_argument("--mnist-dir", required=True, help="folder with the four MNIST IDX files")
    p.add_argument("--custom-dir", help="folder laid out as <digit>/<page>.pgm")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--lr", type=_positive_float, default=0.002, help="Adam learning rate")
    p.add_argument("--epochs", type=_positive_int, default=10, help="passes over the data")
    p.add_argument("--batch", type=_positive_int, default=32, help="mini-batch size")
    p.add_argument("--seed", type=int, default=42, help="seed for weight init and shuffling")
    p.add_argument("--hidden", type=_positive_int, nargs="+", default=[128], help="hidden layer widths")
    p.add_argument("--activation", choices=sorted(nn.ACTIVATIONS), default="relu", help="hidden activation")
    p.add_argument("--bias", action="store_true", help="add bias terms")
    p.add_argument("--limit", type=_positive_int, default=None, help="use only the first N MNIST training images")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix on the MNIST test split", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mnist-dir", help="folder with the MNIST IDX files")
    src.add_argument("--custom-dir", help="folder laid out as <digit>/<page>.pgm")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="cut a page into 28x28 glyphs", formatter_class=fmt)
    p.add_argument("--input", required=True, help="page image (PGM/PPM)")
    p.add_argument("--out-dir", required=True, help="folder for glyph_NNN.pgm and boxes.txt")
    p.add_argument("--debug-dir", help="folder for the intermediate stage images")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("recognize", help="print digit probabilities for an image", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--input", required=True, help="image of one digit, or a page with --page")
    p.add_argument("--page", action="store_true", help="segment the input as a page of digits")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("preprocess", help="apply a single filter stage", formatter_class=fmt)
    p.add_argument("--stage", required=True, choices=["normalize", "meanshift", "median", "threshold", "canny"])
    p.add_argument("--input", required=True, help="input image")
    p.add_argument("--out", required=True, help="output PGM")
    p.add_argument("--kernel", type=_odd_kernel, default=3, help="median kernel size")
    p.add_argument("--threshold", type=float, default=127.0, help="pixels darker than this become foreground")
    p.add_argument("--new-min", type=float, default=0.0, help="normalized minimum (0-255)")
    p.add_argument("--new-max", type=float, default=255.0, help="normalized maximum (0-255)")
    p.add_argument("--spatial-radius", type=_positive_int, default=21, help="mean-shift spatial radius")
    p.add_argument("--color-radius", type=float, default=111.0, help="mean-shift color radius")
    p.add_argument("--canny-low", type=float, default=50.0, help="Canny low threshold")
    p.add_argument("--canny-high", type=float, default=150.0, help="Canny high threshold")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="render a synthetic handwritten page", formatter_class=fmt)
    p.add_argument("--digits", type=_digit_string, required=True, help="digits to draw, e.g. 30851")
    p.add_argument("--out", required=True, help="page PGM to write")
    p.add_argument("--truth", help="ground truth file, lines of 'label x y width height'")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--scale", type=_positive_int, default=2, help="page pixels per glyph pixel")
    p.add_argument("--jitter", type=int, default=3, help="vertical jitter in page pixels")
    p.add_argument("--noise", type=float, default=0.02, help="salt-and-pepper fraction")
    p.add_argument("--lines", type=int, default=0, help="faint ruled lines to draw")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (InputError, DataError, ImageError, nn.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
