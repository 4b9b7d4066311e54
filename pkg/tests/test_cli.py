import re

import numpy as np
import pytest

from digitocr import nn
from digitocr.cli import build_parser, main
from digitocr.data import PageLayout, PageNoise, load_mnist, make_synthetic_page, render_digit
from digitocr.imagecore import read_pnm, write_pnm

EPOCH_LINE = re.compile(r"^epoch \d+ loss \d+\.\d{4} acc \d\.\d{4}$")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def page_file(tmp_path):
    rng = np.random.default_rng(8)
    digits = [3, 0, 8, 5, 1]
    page = make_synthetic_page([render_digit(d, rng) for d in digits], digits,
                               PageLayout(jitter=2), PageNoise(salt_pepper=0.02), seed=8)
    path = tmp_path / "page.pgm"
    write_pnm(path, page.page)
    return path


@pytest.fixture(scope="module")
def trained_model(tmp_path_factory, small_idx_dir):
    path = tmp_path_factory.mktemp("model") / "m.bin"
    assert main(["train", "--mnist-dir", str(small_idx_dir), "--out", str(path), "--epochs", "3"]) == 0
    return path


# -- train ------------------------------------------------------------------------

def test_train_requires_mnist_dir(capsys):
    code, _, err = run(capsys, "train", "--out", "x.bin")
    assert code == 2 and "usage" in err


def test_train_prints_epoch_lines_and_is_deterministic(capsys, tmp_path, small_idx_dir):
    outs = []
    for name in ("a.bin", "b.bin"):
        code, out, _ = run(capsys, "train", "--mnist-dir", small_idx_dir, "--out", tmp_path / name,
                           "--epochs", 2, "--seed", 7)
        assert code == 0
        lines = out.splitlines()
        assert len(lines) == 2 and all(EPOCH_LINE.match(l) for l in lines)
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_train_missing_data_is_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--mnist-dir", tmp_path, "--out", tmp_path / "m.bin")
    assert code == 3 and "error" in err
    assert not (tmp_path / "m.bin").exists()


def test_train_unwritable_output_is_exit_4(capsys, tmp_path, small_idx_dir):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, _ = run(capsys, "train", "--mnist-dir", small_idx_dir, "--out", blocker / "m.bin",
                     "--epochs", 1, "--limit", 50)
    assert code == 4


def test_train_with_custom_dir(capsys, tmp_path, small_idx_dir, page_file):
    (tmp_path / "custom" / "7").mkdir(parents=True)
    (tmp_path / "custom" / "7" / "p.pgm").write_bytes(page_file.read_bytes())
    code, out, _ = run(capsys, "train", "--mnist-dir", small_idx_dir, "--custom-dir", tmp_path / "custom",
                       "--out", tmp_path / "m.bin", "--epochs", 1, "--limit", 100, "--bias")
    assert code == 0 and EPOCH_LINE.match(out.strip())
    assert nn.load_model((tmp_path / "m.bin").read_bytes()).biases is not None


@pytest.mark.parametrize("flag, value", [("--lr", "0"), ("--epochs", "0"), ("--batch", "-1")])
def test_train_rejects_out_of_range_flags(capsys, flag, value):
    code, _, _ = run(capsys, "train", "--mnist-dir", ".", "--out", "m.bin", flag, value)
    assert code == 2


def test_help_lists_defaults():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    text = sub["train"].format_help()
    for needle in ("0.002", "default: 10", "default: 32", "default: 42"):
        assert needle in text
    assert "default: 3" in sub["preprocess"].format_help()


# -- eval -------------------------------------------------------------------------

def test_eval_zero_model(capsys, tmp_path, small_idx_dir):
    base = nn.init_model(seed=0)
    zero = base.with_params([np.zeros_like(p) for p in base.params])
    (tmp_path / "zero.bin").write_bytes(nn.save_model(zero))
    code, out, _ = run(capsys, "eval", "--model", tmp_path / "zero.bin", "--mnist-dir", small_idx_dir)
    assert code == 0
    lines = out.splitlines()
    _, test = load_mnist(small_idx_dir)
    counts = np.bincount(test.labels, minlength=10)
    acc = float(lines[0].split()[1])
    assert acc == pytest.approx(counts[0] / len(test), abs=5e-5)
    assert abs(acc - 0.1) <= 0.05
    rows = [list(map(int, l.split()[1:])) for l in lines[2:12]]
    assert [sum(r) for r in rows] == counts.tolist()


def test_eval_trained_model(capsys, trained_model, small_idx_dir):
    code, out, _ = run(capsys, "eval", "--model", trained_model, "--mnist-dir", small_idx_dir)
    assert code == 0 and float(out.split()[1]) > 0.8


def test_eval_bad_model_is_exit_3(capsys, tmp_path, small_idx_dir):
    (tmp_path / "bad.bin").write_bytes(b"nonsense")
    code, _, _ = run(capsys, "eval", "--model", tmp_path / "bad.bin", "--mnist-dir", small_idx_dir)
    assert code == 3


# -- segment ------------------------------------------------------------------------

def test_segment_blank_page(capsys, tmp_path):
    write_pnm(tmp_path / "blank.pgm", np.full((50, 80), 255, np.uint8))
    code, _, _ = run(capsys, "segment", "--input", tmp_path / "blank.pgm", "--out-dir", tmp_path / "out")
    assert code == 0
    assert (tmp_path / "out" / "boxes.txt").read_text() == ""
    assert not list((tmp_path / "out").glob("glyph_*.pgm"))


def test_segment_five_digits_with_debug(capsys, tmp_path, page_file):
    code, _, _ = run(capsys, "segment", "--input", page_file, "--out-dir", tmp_path / "out",
                     "--debug-dir", tmp_path / "dbg")
    assert code == 0
    glyphs = sorted((tmp_path / "out").glob("glyph_*.pgm"))
    assert [g.name for g in glyphs] == [f"glyph_{i:03d}.pgm" for i in range(5)]
    assert read_pnm(glyphs[0]).shape == (28, 28)
    boxes = (tmp_path / "out" / "boxes.txt").read_text().splitlines()
    assert len(boxes) == 5 and all(len(l.split()) == 4 for l in boxes)
    for name in ("meanshift.pgm", "median.pgm", "normalized.pgm", "canny.pgm", "boxes.ppm"):
        assert (tmp_path / "dbg" / name).exists()
    drawn = read_pnm(tmp_path / "dbg" / "boxes.ppm")
    x, y, w, h = map(int, boxes[0].split())
    assert tuple(drawn[y, x + 2]) == (255, 0, 0) and tuple(drawn[y + 1, x + 2]) == (255, 0, 0)
    assert tuple(drawn[y + h // 2, x]) == (255, 0, 0) and tuple(drawn[y + h // 2, x + 1]) == (255, 0, 0)


def test_segment_missing_input_is_exit_3(capsys, tmp_path):
    code, _, _ = run(capsys, "segment", "--input", tmp_path / "nope.pgm", "--out-dir", tmp_path / "o")
    assert code == 3 and not (tmp_path / "o").exists()


# -- recognize ------------------------------------------------------------------------

PROB_LINE = re.compile(r"^Probability Distribution for (\d) (\S+)$")


def _parse_predictions(out):
    lines = out.splitlines()
    assert len(lines) % 11 == 0
    blocks = []
    for i in range(0, len(lines), 11):
        probs = []
        for d, line in enumerate(lines[i : i + 10]):
            m = PROB_LINE.match(line)
            assert m and int(m.group(1)) == d
            probs.append(float(m.group(2)))
        last = lines[i + 10]
        assert last.startswith("The Predicted Value is ")
        blocks.append((int(last.rsplit(" ", 1)[1]), probs))
    return blocks


def test_recognize_single_digit(capsys, tmp_path, trained_model):
    glyph = render_digit(3)
    write_pnm(tmp_path / "three.pgm", (255 - np.floor(glyph * 255 + 0.5)).astype(np.uint8))
    code, out, _ = run(capsys, "recognize", "--model", trained_model, "--input", tmp_path / "three.pgm")
    assert code == 0
    ((digit, probs),) = _parse_predictions(out)
    assert abs(sum(probs) - 1) < 1e-9 and digit == int(np.argmax(probs))
    assert out.rstrip().endswith(f"The Predicted Value is {digit}")


def test_recognize_page(capsys, trained_model, page_file):
    code, out, _ = run(capsys, "recognize", "--model", trained_model, "--input", page_file, "--page")
    assert code == 0
    blocks = _parse_predictions(out)
    assert len(blocks) == 5


def test_recognize_large_single_digit_photo(capsys, tmp_path, trained_model):
    big = make_synthetic_page([render_digit(0)], [0], PageLayout(scale=3)).page
    write_pnm(tmp_path / "zero.pgm", big)
    code, out, _ = run(capsys, "recognize", "--model", trained_model, "--input", tmp_path / "zero.pgm")
    assert code == 0 and len(_parse_predictions(out)) == 1


# -- preprocess -------------------------------------------------------------------------

def test_preprocess_median_fixture(capsys, tmp_path):
    fixture = np.array([[0, 30, 45], [50, 100, 55], [60, 10, 90]], np.uint8)
    write_pnm(tmp_path / "f.pgm", fixture)
    code, _, _ = run(capsys, "preprocess", "--stage", "median", "--kernel", 3,
                     "--input", tmp_path / "f.pgm", "--out", tmp_path / "m.pgm")
    assert code == 0 and read_pnm(tmp_path / "m.pgm")[1, 1] == 50


def test_preprocess_canny_constant_is_black(capsys, tmp_path):
    write_pnm(tmp_path / "c.pgm", np.full((16, 16), 140, np.uint8))
    code, _, _ = run(capsys, "preprocess", "--stage", "canny", "--input", tmp_path / "c.pgm",
                     "--out", tmp_path / "e.pgm")
    assert code == 0 and not read_pnm(tmp_path / "e.pgm").any()


def test_preprocess_unknown_stage(capsys, tmp_path):
    code, _, _ = run(capsys, "preprocess", "--stage", "sharpen", "--input", "x", "--out", tmp_path / "y.pgm")
    assert code == 2 and not (tmp_path / "y.pgm").exists()


@pytest.mark.parametrize("stage", ["normalize", "meanshift", "threshold"])
def test_preprocess_other_stages(capsys, tmp_path, stage):
    img = np.random.default_rng(0).integers(40, 200, (12, 12)).astype(np.uint8)
    write_pnm(tmp_path / "i.pgm", img)
    code, _, _ = run(capsys, "preprocess", "--stage", stage, "--input", tmp_path / "i.pgm", "--out", tmp_path / "o.pgm")
    out = read_pnm(tmp_path / "o.pgm")
    assert code == 0 and out.shape == img.shape
    if stage == "normalize":
        assert out.min() == 0 and out.max() == 255


# -- synth ---------------------------------------------------------------------------------

def test_synth_writes_page_and_truth(capsys, tmp_path):
    code, _, _ = run(capsys, "synth", "--digits", "4096", "--out", tmp_path / "p.pgm", "--truth", tmp_path / "t.txt")
    assert code == 0
    truth = (tmp_path / "t.txt").read_text().splitlines()
    assert [l.split()[0] for l in truth] == ["4", "0", "9", "6"]
    code, out, _ = run(capsys, "segment", "--input", tmp_path / "p.pgm", "--out-dir", tmp_path / "o")
    assert out.strip() == "4 glyphs"
