import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import save_png
from zerodce import modelio, numerics
from zerodce.cli import main
from zerodce.images import read_rgb


@pytest.fixture
def weights_file(tmp_path, identity_weights):
    path = tmp_path / "id.zdce"
    modelio.save_weights(identity_weights, path)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help(capsys):
    code, out, _ = run(["--help"], capsys)
    assert code == 0
    for cmd in ("train", "enhance", "heatmaps", "metrics", "bench", "gradcheck"):
        assert cmd in out


def test_enhance_batch(tmp_path, weights_file, gradient_png, capsys, rng):
    other = save_png(tmp_path / "other.png", rng.integers(0, 256, (8, 6, 3)))
    out_dir = tmp_path / "out"
    code, out, _ = run(["enhance", "--weights", weights_file, "--out", out_dir, gradient_png, other], capsys)
    assert code == 0
    lines = [line.split("\t") for line in out.splitlines()]
    assert [l[0] for l in lines] == [str(gradient_png), str(other)]
    assert read_rgb(out_dir / "ramp.png").shape == (37, 53, 3)
    assert read_rgb(out_dir / "other.png").shape == (8, 6, 3)


def test_enhance_with_reference(tmp_path, weights_file, gradient_png, capsys):
    code, out, _ = run(["enhance", "--weights", weights_file, "--out", tmp_path / "o",
                        "--reference", gradient_png, gradient_png], capsys)
    assert code == 0
    fields = out.strip().split("\t")
    assert len(fields) == 5 and float(fields[3]) > 40


def test_enhance_arch_mismatch_is_usage_error(tmp_path, weights_file, gradient_png, capsys):
    code, _, err = run(["enhance", "--weights", weights_file, "--out", tmp_path, "--depth", "3", gradient_png], capsys)
    assert code == 1 and "depth" in err


def test_missing_input_is_io_error(tmp_path, weights_file, capsys):
    code, _, _ = run(["enhance", "--weights", weights_file, "--out", tmp_path, tmp_path / "nope.png"], capsys)
    assert code == 2


def test_corrupt_weights_is_format_error(tmp_path, gradient_png, capsys):
    bad = tmp_path / "bad.zdce"
    bad.write_bytes(b"ZDCE\x01\x00")
    code, _, err = run(["enhance", "--weights", bad, "--out", tmp_path, gradient_png], capsys)
    assert code == 3 and "error" in err


def test_usage_errors(capsys):
    assert run(["enhance"], capsys)[0] == 1
    assert run(["no-such-command"], capsys)[0] == 1
    assert run(["bench", "--repeats", "2"], capsys)[0] == 1


def test_heatmaps(tmp_path, weights_file, gradient_png, capsys):
    code, out, _ = run(["heatmaps", "--weights", weights_file, "--out", tmp_path / "h", gradient_png], capsys)
    assert code == 0 and len(out.splitlines()) == 3


def test_metrics(tmp_path, capsys):
    a = save_png(tmp_path / "a.png", np.full((4, 4, 3), 0))
    b = save_png(tmp_path / "b.png", np.full((4, 4, 3), 255))
    code, out, _ = run(["metrics", "--reference", b, a, b], capsys)
    assert code == 0
    rows = [line.split("\t") for line in out.splitlines()]
    assert rows[0] == [str(a), "0.0000", "255.0000"]
    assert rows[1] == [str(b), "99.0000", "0.0000"]


def test_bench(weights_file, capsys):
    code, out, _ = run(["bench", "--weights", weights_file, "--width", 16, "--height", 8, "--repeats", 3], capsys)
    assert code == 0 and "samples\t3" in out and "median_s" in out


def test_train_from_config(tmp_path, capsys):
    cfg = {"image_size": 16, "batch_size": 2, "max_steps": 2, "synthetic": 3, "val_fraction": 0.0,
           "arch": {"depth": 3, "width": 4, "n_iter": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run(["train", "--config", tmp_path / "c.json", "--max-steps", 3, "--lr", 1e-3,
                        "--out", tmp_path / "run"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split("\t") == ["step", "l_spa", "l_exp", "l_col", "l_tv", "total"]
    assert len(lines) == 4
    saved = json.loads((tmp_path / "run" / "config.json").read_text())
    assert saved["max_steps"] == 3 and saved["optimizer"]["lr"] == 1e-3
    assert modelio.load_weights(tmp_path / "run" / "final.zdce").config.depth == 3


def test_train_bad_config_key(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    assert run(["train", "--config", tmp_path / "c.json"], capsys)[0] == 1


def test_train_empty_data_dir_is_io_error(tmp_path, capsys):
    code, _, _ = run(["train", "--data-dir", tmp_path, "--image-size", 16, "--max-steps", 1], capsys)
    assert code == 2


def test_gradcheck_passes(capsys):
    code, out, _ = run(["gradcheck", "--float64"], capsys)
    assert code == 0
    assert len(out.splitlines()) == 17 and "FAIL" not in out


def test_gradcheck_negative_control(monkeypatch, capsys):
    monkeypatch.setattr(numerics, "_relu_backward", lambda mask, g: g)
    code, out, err = run(["gradcheck"], capsys)
    assert code == 4
    assert "FAIL" in out and "relu" in err


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "zerodce.cli", "metrics", "--reference", tmp_path / "x.png",
                           tmp_path / "y.png"], capture_output=True, text=True)
    assert proc.returncode == 2
