import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from polyct.core import FanBeamGeometry, MaterialImage, ParseError
from polyct.imageio import (
    geometry_from_meta,
    geometry_to_meta,
    load_material_image,
    load_measurement,
    read_grid_csv,
    read_pgm,
    read_png16,
    render_heatmap,
    save_material_image,
    save_measurement,
    write_grid_csv,
    write_pgm,
    write_png16,
)
from polyct.metrics import confusion_matrix, dice_scores, evaluate, read_metrics, write_metrics
from polyct.physics import MeasurementSet


def test_grid_csv_round_trip(tmp_path):
    arr = np.random.default_rng(0).random((4, 5, 3))
    p = tmp_path / "g.csv"
    write_grid_csv(p, arr, note="x")
    back, meta = read_grid_csv(p)
    np.testing.assert_array_equal(back, arr)
    assert meta["note"] == "x"


def test_grid_csv_parse_error_line(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("# dims=2,2\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as exc:
        read_grid_csv(p)
    assert exc.value.line == 3


def test_material_image_round_trip(tmp_path):
    w = MaterialImage.from_labels(np.array([[0, 1], [2, 1]]), 3, 0.25)
    p = tmp_path / "w.csv"
    save_material_image(w, p, ("air", "soft", "bone"))
    back = load_material_image(p)
    assert back.feasible and back.pixel_size == 0.25
    np.testing.assert_array_equal(back.data, w.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_png16_round_trip_is_monotone(h, w, seed):
    import tempfile
    from pathlib import Path
    img = np.random.default_rng(seed).random((h, w))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.png"
        write_png16(p, img)
        back = read_png16(p)
    assert back.shape == (h, w)
    np.testing.assert_allclose(back, np.clip(img, 0, 1), atol=1 / 65535)


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    p = tmp_path / "x.pgm"
    write_pgm(p, img)
    assert p.read_text().startswith("P2")
    np.testing.assert_allclose(read_pgm(p), img, atol=1 / 65535)


def test_constant_image_renders_uniform(tmp_path):
    p = tmp_path / "c.png"
    render_heatmap(p, np.full((10, 12), 3.0))
    rgb = np.asarray(Image.open(p).convert("RGB"))
    panel = rgb[:30, :36]
    assert np.all(panel == panel[0, 0])


def test_geometry_meta_round_trip():
    g = FanBeamGeometry.default(32, n_views=17, n_det=21)
    back = geometry_from_meta({k: str(v) for k, v in geometry_to_meta(g).items()})
    assert back.key() == g.key()


def test_measurement_round_trip(tmp_path):
    g = FanBeamGeometry.default(8, n_views=5, n_det=7)
    rng = np.random.default_rng(1)
    ms = MeasurementSet(rng.random((5, 7)), 0.5, 100.0, rng.random((7, 5, 7)), 3, g.key())
    save_measurement(ms, tmp_path / "m", g, ("a", "b"))
    back, meta = load_measurement(tmp_path / "m")
    np.testing.assert_array_equal(back.f, ms.f)
    np.testing.assert_array_equal(back.y_true, ms.y_true)
    assert (back.sigma, back.i_bar, back.seed) == (0.5, 100.0, 3)
    assert meta["materials"] == "a,b" and back.geometry_key == g.key()


def test_metrics_of_identical_images():
    w = MaterialImage.from_labels(np.array([[0, 1], [1, 1]]), 3, 1.0)
    m = evaluate(w, w, ("a", "b", "c"))
    assert m.accuracy == 1.0 and m.rel_l2 == 0.0
    assert m.dice == (1.0, 1.0, 1.0)          # class absent from both counts as perfect


def test_confusion_and_dice():
    t = np.array([0, 0, 1, 1])
    p = np.array([0, 1, 1, 1])
    C = confusion_matrix(t, p, 2)
    np.testing.assert_array_equal(C, [[1, 1], [0, 2]])
    np.testing.assert_allclose(dice_scores(C), [2 / 3, 0.8])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_confusion_total_and_accuracy(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 4, (5, 5))
    p = rng.integers(0, 4, (5, 5))
    C = confusion_matrix(t, p, 4)
    assert C.sum() == 25 and np.trace(C) == np.sum(t == p)
    d = dice_scores(C)
    assert np.all((0 <= d) & (d <= 1))


def test_metrics_file_round_trip(tmp_path):
    a = MaterialImage.from_labels(np.array([[0, 1], [1, 0]]), 2, 1.0)
    b = MaterialImage.from_labels(np.array([[0, 1], [0, 0]]), 2, 1.0)
    m = evaluate(b, a, ("air", "soft"))
    p = tmp_path / "m.txt"
    write_metrics(m, p)
    vals = read_metrics(p)
    assert vals["accuracy"] == 0.75 and "dice.soft" in vals and "confusion.soft.air" in vals
