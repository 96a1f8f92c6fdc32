import numpy as np
import pytest

from csvae_lab.errors import DataError
from csvae_lab.figures import mosaic, read_pgm, svg_scatter, write_pgm


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((12, 17))
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n17 12\n255\n")
    back = read_pgm(path)
    np.testing.assert_allclose(back, img, atol=1.0 / 255.0 + 1e-9)


def test_pgm_clips_out_of_range(tmp_path):
    path = tmp_path / "img.pgm"
    write_pgm(path, np.array([[-0.5, 0.5], [1.5, 1.0]]))
    back = read_pgm(path)
    assert back[0, 0] == 0.0 and back[1, 0] == 1.0


def test_mosaic_layout():
    tiles = [[np.zeros((4, 4)), np.ones((4, 4))],
             [np.full((4, 4), 0.5), np.zeros((4, 4))]]
    out = mosaic(tiles, gap=2, gap_value=1.0)
    assert out.shape == (10, 10)
    assert np.all(out[:4, :4] == 0.0)
    assert np.all(out[:4, 6:] == 1.0)
    assert np.all(out[4:6, :] == 1.0)  # gap row


def test_mosaic_rejects_ragged():
    with pytest.raises(ValueError):
        mosaic([[np.zeros((4, 4))], [np.zeros((4, 4)), np.zeros((4, 4))]])
    with pytest.raises(ValueError):
        mosaic([[np.zeros((4, 4)), np.zeros((3, 3))]])


def test_svg_scatter_writes_points_and_caption(tmp_path):
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 1.0]])
    labels = np.array([0, 1, 1])
    path = tmp_path / "s.svg"
    svg_scatter(path, pts, labels, "demo plane", caption="probe accuracy: 0.9876",
                axis_names=("z1", "z2"))
    text = path.read_text()
    assert text.count("<circle") == 3 + 2  # points + legend dots
    assert "probe accuracy: 0.9876" in text
    assert "demo plane" in text and "</svg>" in text


def test_svg_scatter_empty_errors(tmp_path):
    with pytest.raises(DataError):
        svg_scatter(tmp_path / "x.svg", np.zeros((0, 2)), np.zeros(0), "t")
    assert not (tmp_path / "x.svg").exists()
