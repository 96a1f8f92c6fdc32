import numpy as np
import pytest

from csvae_lab.cli import main
from csvae_lab.data import load_dataset
from csvae_lab.figures import read_pgm


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def swiss_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "roll.csvd"
    assert run("generate-data", "swiss-roll", "--n", "400", "--seed", "0",
               "--out", str(path)) == 0
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, swiss_file):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text(
        "model.kind = csvae\n"
        "model.enc_hidden = 16\nmodel.dec_hidden = 16\nmodel.adv_hidden = 16\n"
        "optim.epochs = 3\n"
        f"data.path = {swiss_file}\n")
    assert run("train", "--config", str(cfg), "--out", str(out)) == 0
    return out


def test_generate_data_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csvd", tmp_path / "b.csvd"
    for path in (a, b):
        assert run("generate-data", "swiss-roll", "--n", "100", "--seed", "3",
                   "--out", str(path)) == 0
    assert a.read_bytes() == b.read_bytes()
    out = capsys.readouterr().out
    assert "n=100" in out and "k=1" in out


def test_generate_data_glyphs_paired_doubles(tmp_path):
    path = tmp_path / "g.csvd"
    assert run("generate-data", "glyphs", "--paired", "--n", "30", "--size", "16",
               "--out", str(path)) == 0
    ds = load_dataset(path)
    assert ds.n == 60


def test_train_writes_artifacts(trained_run):
    assert (trained_run / "checkpoint.csvc").exists()
    lines = (trained_run / "loss_curve.csv").read_text().strip().splitlines()
    assert lines[0].startswith("epoch,recon")
    assert len(lines) == 1 + 3
    manifest = (trained_run / "manifest.txt").read_text()
    assert "version = csvae-lab" in manifest and "wall_time_s" in manifest


def test_train_rejects_zero_epochs(trained_run, swiss_file, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"data.path = {swiss_file}\n")
    assert run("train", "--config", str(cfg), "--epochs", "0",
               "--out", str(tmp_path)) == 2


def test_train_resume_continues_counters(trained_run, swiss_file, tmp_path, capsys):
    out2 = tmp_path / "resumed"
    assert run("train", "--resume", str(trained_run / "checkpoint.csvc"),
               "--epochs", "2", "--out", str(out2)) == 0
    capsys.readouterr()
    assert run("inspect", "--checkpoint", str(out2 / "checkpoint.csvc")) == 0
    text = capsys.readouterr().out
    assert "epoch=5" in text
    lines = (out2 / "loss_curve.csv").read_text().strip().splitlines()
    assert lines[1].startswith("3,")  # epochs continue at 3


def test_eval_mi_and_reports(trained_run, swiss_file, tmp_path, capsys):
    out = tmp_path / "eval"
    assert run("eval", "--method", "mi", "--checkpoint",
               str(trained_run / "checkpoint.csvc"), "--dataset", str(swiss_file),
               "--out", str(out), "--seed", "0") == 0
    kv = (out / "mi_report.kv").read_text()
    for key in ("mi.csvae.h_y", "mi.csvae.h_y_given_z", "mi.csvae.mi",
                "mi.csvae.probe_accuracy"):
        assert key in kv
    assert (out / "mi_report.txt").exists()


def test_inspect_detects_corruption(trained_run, tmp_path):
    blob = bytearray((trained_run / "checkpoint.csvc").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad = tmp_path / "bad.csvc"
    bad.write_bytes(bytes(blob))
    assert run("inspect", "--checkpoint", str(bad)) == 3


def test_inspect_reports_checksum_ok(trained_run, capsys):
    assert run("inspect", "--checkpoint", str(trained_run / "checkpoint.csvc")) == 0
    out = capsys.readouterr().out
    assert "checksum OK" in out and "tensors:" in out


def test_plot_latent_writes_svgs(trained_run, swiss_file, tmp_path):
    out = tmp_path / "plots"
    assert run("plot-latent", "--checkpoint", str(trained_run / "checkpoint.csvc"),
               "--dataset", str(swiss_file), "--out", str(out), "--seed", "0") == 0
    assert (out / "latent_z.svg").exists()
    assert (out / "latent_w_x_ge_10.svg").exists()
    assert (out / "latent_mixed.svg").exists()
    assert "linear probe accuracy" in (out / "latent_z.svg").read_text()


def test_switch_point_cloud_on_vectors(trained_run, swiss_file, tmp_path):
    out = tmp_path / "sw"
    assert run("switch", "--checkpoint", str(trained_run / "checkpoint.csvc"),
               "--dataset", str(swiss_file), "--policy", "grid", "--steps", "2",
               "--inputs", "0,1", "--out", str(out)) == 0
    lines = (out / "switch_points.txt").read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 1 + 2 * 4  # 2 inputs x 2x2 grid


def test_switch_policy_kind_mismatch(trained_run, swiss_file, tmp_path):
    assert run("switch", "--checkpoint", str(trained_run / "checkpoint.csvc"),
               "--dataset", str(swiss_file), "--policy", "class-mean",
               "--out", str(tmp_path)) == 2


def test_switch_mosaic_on_images(tmp_path):
    data = tmp_path / "g.csvd"
    assert run("generate-data", "glyphs", "--n", "60", "--size", "16",
               "--split", "0.7,0.15,0.15", "--out", str(data)) == 0
    out = tmp_path / "run"
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model.kind = csvae\nmodel.conv_channels = 4,8\n"
                   "model.z_dim = 2\noptim.epochs = 2\n"
                   f"data.path = {data}\n")
    assert run("train", "--config", str(cfg), "--out", str(out)) == 0
    sw = tmp_path / "sw"
    assert run("switch", "--checkpoint", str(out / "checkpoint.csvc"),
               "--dataset", str(data), "--policy", "grid", "--steps", "4",
               "--inputs", "0", "--out", str(sw)) == 0
    img = read_pgm(sw / "switch_mosaic.pgm")
    # 1 row, 16 grid tiles + 1 reconstruction tile, 16px tiles with 2px gaps
    assert img.shape == (16, 17 * 16 + 16 * 2)


def test_missing_dataset_is_data_error(trained_run, tmp_path):
    assert run("eval", "--method", "mi", "--checkpoint",
               str(trained_run / "checkpoint.csvc"), "--dataset",
               str(tmp_path / "nope.csvd"), "--out", str(tmp_path)) == 3


def test_bad_config_is_config_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.kind = gan\n")
    assert run("train", "--config", str(cfg), "--out", str(tmp_path)) == 2