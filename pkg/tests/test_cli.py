import numpy as np
import pytest

from polyct import cli
from polyct.core import ParseError
from polyct.imageio import load_material_image, read_grid_csv
from polyct.metrics import read_metrics


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert cli.main(["phantom", "phantom_2mat", "--size", "16", "--n-materials", "2",
                     "--out", str(d)]) == 0
    assert cli.main(["simulate", str(d / "phantom.csv"), "--preset", "c", "--seed", "3",
                     "--n-views", "24", "--n-det", "31", "--out", str(d / "meas")]) == 0
    return d


def test_phantom_and_simulate_outputs(pipeline):
    w = load_material_image(pipeline / "phantom.csv")
    assert w.data.shape == (16, 16, 2) and w.feasible
    f, meta = read_grid_csv(pipeline / "meas" / "f.csv")
    assert f.shape == (24, 31)
    assert (pipeline / "meas" / "meta.txt").exists()
    assert len(list((pipeline / "meas").glob("y_true_*.csv"))) == 7


def test_reconstruct_evaluate_render(pipeline):
    out = pipeline / "rec"
    code = cli.main(["reconstruct", str(pipeline / "meas"), "--preset", "c", "--solver", "em",
                     "--set", "em.outer_iters=5", "--set", "em.inner_iters=20", "--out", str(out)])
    assert code == 0
    for name in ["recon.csv", "recon_reinit.csv", "trace.csv", "config.txt", "status.txt"]:
        assert (out / name).exists()
    assert len(list(out.glob("w_*.png"))) == 2
    assert cli.main(["evaluate", str(out / "recon.csv"), str(pipeline / "phantom.csv"),
                     "--out", str(out)]) == 0
    vals = read_metrics(out / "metrics.txt")
    assert 0 <= vals["accuracy"] <= 1
    assert cli.main(["render", str(pipeline / "meas" / "f.csv"), "--out", str(out / "f.png")]) == 0
    assert (out / "f.png").exists()


def test_evaluate_truth_against_itself(pipeline, tmp_path):
    gt = str(pipeline / "phantom.csv")
    m = cli.cmd_evaluate(gt, gt, tmp_path)
    assert m.accuracy == 1.0 and m.rel_l2 == 0.0


def test_bad_config_key_is_a_parse_error(pipeline, tmp_path, capsys):
    code = cli.main(["reconstruct", str(pipeline / "meas"), "--set", "nope=1", "--out", str(tmp_path)])
    assert code == cli.EXIT_PARSE
    assert "nope" in capsys.readouterr().err


def test_missing_file_is_a_parse_error(tmp_path):
    assert cli.main(["simulate", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 1


def test_config_precedence(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("alpha = 5\nsolver = pd\n")
    cfg = cli.build_config("b", p, "admm", 7, ["beta=0.5"])
    assert cfg.alpha == 5 and cfg.beta == 0.5 and cfg.solver == "admm" and cfg.seed == 7
    assert cfg.sigma == 2e-6
    with pytest.raises(ParseError):
        cli.build_config(None, None, None, None, ["em.omega=3"])


def test_numerical_failure_exit_code(pipeline, tmp_path, monkeypatch):
    from polyct.core import ConvergenceError
    import polyct.solvers as solvers

    def boom(*a, **k):
        raise ConvergenceError("no", 1.0)

    monkeypatch.setattr(solvers, "run_solver", boom)
    code = cli.main(["reconstruct", str(pipeline / "meas"), "--out", str(tmp_path)])
    assert code == cli.EXIT_NOCONV
    assert (tmp_path / "trace.csv").exists()


def test_render_material_grid(pipeline, tmp_path):
    paths = cli.cmd_render(pipeline / "phantom.csv", tmp_path / "imgs")
    assert len(paths) == 2
    from polyct.imageio import read_png16
    img = read_png16(paths[1])
    truth = load_material_image(pipeline / "phantom.csv").data[..., 1]
    np.testing.assert_allclose(img, truth, atol=1e-4)
