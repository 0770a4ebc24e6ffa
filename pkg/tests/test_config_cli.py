import struct

import numpy as np
import pytest
from PIL import Image

from rangeseg.cli import main
from rangeseg.config import RunConfig, load_run_config, parse_lines
from rangeseg.errors import ConfigError
from rangeseg.pointcloud_io import CLASS_COLORS, read_colored_ply, read_labeled_sample
from rangeseg.projection import load_range_image

TINY = ["--set", "grid.H=16", "--set", "grid.W=32"]
SMALL_NET = ["--set", "unet.depth=2", "--set", "unet.base_channels=4"]


# configuration files -------------------------------------------------------------

def test_defaults():
    cfg = RunConfig()
    assert cfg.train.learning_rate == 0.001
    assert cfg.unet.depth == 3 and cfg.unet.base_channels == 16
    assert cfg.extractor.n_features == 3


def test_parse_file_with_comments(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# ablation\nunet.depth = 2\nextractor.mode = absolute  # trailing\n\nloss.use_focal = false\n"
                 "extractor.mlp1_widths = 3, 4, 8\nextractor.mlp2_widths = 12, 6\nloss.class_weights = 1,2,3,4\n")
    cfg = load_run_config(f)
    assert cfg.unet.depth == 2
    assert cfg.extractor.mode == "absolute"
    assert cfg.loss.use_focal is False
    assert cfg.extractor.mlp1_widths == (3, 4, 8)
    assert cfg.loss.class_weights == (1.0, 2.0, 3.0, 4.0)


def test_overrides_win(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("train.epochs = 3\n")
    assert load_run_config(f, ["train.epochs=7"]).train.epochs == 7


@pytest.mark.parametrize("line", ["unet.dpeth = 3", "nosuch.key = 1", "depth = 3"])
def test_unknown_keys_rejected(line):
    with pytest.raises(ConfigError):
        load_run_config(None, [line])


@pytest.mark.parametrize("line", ["unet.depth = three", "loss.use_focal = maybe", "train.epochs = 0", "novalue"])
def test_bad_values_rejected(line):
    with pytest.raises(ConfigError):
        load_run_config(None, [line])


def test_parse_lines_reports_location():
    with pytest.raises(ConfigError, match="<x>:2"):
        parse_lines(["a.b = 1", "oops"], "<x>")


def test_grid_resize_keeps_field_of_view():
    g = load_run_config(None, ["grid.W=128"]).grid
    assert g.W * g.delta_theta == pytest.approx(512 * RunConfig().grid.delta_theta)


# command line --------------------------------------------------------------------

def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_project_empty_scan(tmp_path, capsys):
    scan = tmp_path / "e.bin"
    scan.write_bytes(b"")
    code, out, _ = run(capsys, "project", str(scan), "-o", str(tmp_path / "e.ri"))
    assert code == 0
    assert out.strip() == "valid=0 dropped_oov=0 dropped_collision=0"
    assert load_range_image(tmp_path / "e.ri").n_valid == 0


def test_project_reports_drops(tmp_path, capsys):
    scan = tmp_path / "s.bin"
    scan.write_bytes(struct.pack("<12f", 10, 0, 0, 0.5, 10, 0, 0, 0.2, -10, 0, 0, 0.1))
    code, out, _ = run(capsys, "project", str(scan), "-o", str(tmp_path / "s.ri"))
    assert (code, out.strip()) == (0, "valid=1 dropped_oov=1 dropped_collision=1")


def test_usage_and_runtime_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["project"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 5)
    code, _, err = run(capsys, "project", str(bad), "-o", str(tmp_path / "x.ri"))
    assert code == 1 and "16" in err
    code, _, err = run(capsys, "project", str(bad), "-o", str(tmp_path / "x.ri"), "--set", "unet.nope=1")
    assert code == 2 and "unknown configuration key" in err
    code, _, _ = run(capsys, "project", str(tmp_path / "missing.bin"), "-o", str(tmp_path / "x.ri"))
    assert code == 1


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "-n", "2", "-o", str(out), "--scans", *TINY]) == 0
    return out


def test_synth_writes_samples_and_scans(synth_dir, capsys):
    names = sorted(p.name for p in synth_dir.iterdir())
    assert names == ["synth_00000.bin", "synth_00000.npy", "synth_00001.bin", "synth_00001.npy"]
    s = read_labeled_sample(synth_dir / "synth_00000.npy", expected_shape=(16, 32, 6))
    assert s.image.n_valid > 0 and s.labels.max() > 0


def test_projecting_synth_scan_matches_sample(synth_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "project", str(synth_dir / "synth_00000.bin"), "-o", str(tmp_path / "a.ri"), *TINY)
    assert code == 0 and "dropped_oov=0 dropped_collision=0" in out
    img = load_range_image(tmp_path / "a.ri")
    s = read_labeled_sample(synth_dir / "synth_00000.npy", expected_shape=None)
    np.testing.assert_array_equal(img.mask, s.image.mask)


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    args = ["train", "--data", str(synth_dir), *SMALL_NET, "--set", "train.epochs=3", "--set", "train.batch_size=2"]
    assert main([*args, "-o", str(out / "a.ckpt"), "--log", str(out / "a.log")]) == 0
    assert main([*args, "-o", str(out / "b.ckpt"), "--log", str(out / "b.log")]) == 0
    return out


def test_train_twice_is_identical(trained):
    assert (trained / "a.ckpt").read_bytes() == (trained / "b.ckpt").read_bytes()
    assert (trained / "a.log").read_text() == (trained / "b.log").read_text()
    assert (trained / "a.log").read_text().startswith("step=1 epoch=1 loss=")


def test_predict_and_eval(synth_dir, trained, tmp_path, capsys):
    code, out, _ = run(capsys, "predict", "--ckpt", str(trained / "a.ckpt"), str(synth_dir / "synth_00000.npy"),
                       "-o", str(tmp_path / "p.npy"))
    assert code == 0 and out.startswith("background=")
    labels = np.load(tmp_path / "p.npy")
    assert labels.shape == (16, 32) and labels.min() >= -1 and labels.max() <= 3
    code, out, _ = run(capsys, "eval", "--ckpt", str(trained / "a.ckpt"), "--data", str(synth_dir), "--per-sample")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["Cars", "Pedestrians", "Cyclists", "Average"]
    assert len(lines[1].split()) == 4


def test_export_png_and_ply(synth_dir, trained, tmp_path, capsys):
    sample = str(synth_dir / "synth_00000.npy")
    assert run(capsys, "export", sample, "--png", "-o", str(tmp_path / "gt.png"))[0] == 0
    rgb = np.asarray(Image.open(tmp_path / "gt.png"))
    assert rgb.shape == (16, 32, 3)
    s = read_labeled_sample(sample, expected_shape=None)
    flipped = s.labels[::-1]
    cars = flipped == 1
    if cars.any():
        assert np.all(rgb[cars & (s.image.mask[::-1] > 0)] == CLASS_COLORS[1])
    assert np.all(rgb[s.image.mask[::-1] == 0] == 0)
    assert run(capsys, "export", sample, "--ply", "--ckpt", str(trained / "a.ckpt"), "-o", str(tmp_path / "p.ply"))[0] == 0
    xyz, _ = read_colored_ply(tmp_path / "p.ply")
    assert len(xyz) == s.image.n_valid
    code, _, err = run(capsys, "export", sample, "--png", "--ply", "-o", str(tmp_path / "x"))
    assert code == 2 and "exactly one" in err


def test_threads_flag(tmp_path, capsys):
    scan = tmp_path / "e.bin"
    scan.write_bytes(b"")
    assert run(capsys, "project", str(scan), "-o", str(tmp_path / "e.ri"), "--threads", "2")[0] == 0
