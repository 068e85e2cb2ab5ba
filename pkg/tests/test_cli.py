import json

import numpy as np
import pandas as pd
import pytest

from hsplat.cli import main
from hsplat.utils.image_io import clear_image_cache, load_image, save_png
from hsplat.utils.synthetic import textured_image


@pytest.fixture()
def target_png(tmp_path):
    path = tmp_path / "target.png"
    save_png(str(path), textured_image(24, 24, seed=4))
    clear_image_cache()
    return str(path)


def _fit2d(target_png, out, *extra):
    return main(["fit2d", "--image", target_png, "--n-init", "4", "--iterations", "3", "--out", str(out), *extra])


def test_metrics_of_identical_images(target_png, capsys):
    assert main(["metrics", "--a", target_png, "--b", target_png]) == 0
    assert capsys.readouterr().out.strip() == "psnr=inf ssim=1.0"


def test_missing_image_exits_with_io_code(tmp_path, capsys):
    code = main(["metrics", "--a", str(tmp_path / "a.png"), "--b", str(tmp_path / "b.png")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error: unreadable image")


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["train", "--no-such-flag"]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_invalid_threshold_is_a_usage_error(target_png, tmp_path, capsys):
    assert _fit2d(target_png, tmp_path / "out", "--tau-p", "-1") == 1
    assert "tau_p" in capsys.readouterr().err


def test_bad_config_reports_line(target_png, tmp_path, capsys):
    config = tmp_path / "broken.yaml"
    config.write_text("iterations: 5\nstrategy: [abs\n")
    assert _fit2d(target_png, tmp_path / "out", "--config", str(config)) == 1
    assert f"{config}:" in capsys.readouterr().err


def test_view3d_needs_cameras(tmp_path, capsys):
    assert main(["train", "--iterations", "1", "--out", str(tmp_path)]) == 1
    assert "--cameras" in capsys.readouterr().err


def test_fit2d_writes_run_outputs(target_png, tmp_path):
    out = tmp_path / "run"
    assert _fit2d(target_png, out) == 0
    metrics = pd.read_csv(out / "metrics.csv")
    assert list(metrics["iteration"]) == [3]
    assert (out / "final.ply").is_file()
    assert (out / "renders" / "target.png").is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_n"] == 4
    assert summary["bytes"] == 4 * 14 * 4
    assert summary["config"]["regime"] == "image2d"


def test_fit2d_is_deterministic_across_threads(target_png, tmp_path):
    assert _fit2d(target_png, tmp_path / "a", "--lambda-dssim", "0.2") == 0
    assert _fit2d(target_png, tmp_path / "b", "--lambda-dssim", "0.2", "--threads", "3") == 0
    for name in ("metrics.csv", "final.ply"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_render_reproduces_saved_render(target_png, tmp_path):
    assert _fit2d(target_png, tmp_path / "run") == 0
    out = tmp_path / "again"
    assert main(["render", "--ply", str(tmp_path / "run" / "final.ply"), "--size", "24x24", "--out", str(out)]) == 0
    np.testing.assert_array_equal(load_image(str(out / "render.png")), load_image(str(tmp_path / "run" / "renders" / "target.png")))


def test_render_needs_a_target(target_png, tmp_path, capsys):
    assert _fit2d(target_png, tmp_path / "run") == 0
    assert main(["render", "--ply", str(tmp_path / "run" / "final.ply"), "--out", str(tmp_path)]) == 1
    assert main(["render", "--ply", str(tmp_path / "run" / "final.ply"), "--size", "big", "--out", str(tmp_path)]) == 1


def test_single_gaussian_diagnose(target_png, tmp_path):
    out = tmp_path / "single"
    assert _fit2d(target_png, out, "--single-gaussian", "--diagnose", "--top-k", "1") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_n"] == 1
    assert not summary["config"]["densify"]["enabled"]
    assert (out / "diagnose" / "collision.csv").is_file()
    assert len(list((out / "diagnose" / "sign_maps").glob("*.pfm"))) == 1


def test_diagnose_command(target_png, tmp_path):
    assert _fit2d(target_png, tmp_path / "run") == 0
    out = tmp_path / "diag"
    code = main(
        ["diagnose", "--image", target_png, "--ply", str(tmp_path / "run" / "final.ply"), "--tau-p", "1e-6", "1e-4", "--out", str(out)]
    )
    assert code == 0
    summary = json.loads((out / "diagnose.json").read_text())
    assert [row["tau_p"] for row in summary["selection"]] == [1e-6, 1e-4]


def test_sweep_command(target_png, tmp_path):
    out = tmp_path / "sweep"
    code = main(
        ["sweep", "--image", target_png, "--n-init", "4", "--iterations", "2", "--tau-p", "1e9", "--out", str(out)]
    )
    assert code == 0
    table = pd.read_csv(out / "sweep.csv")
    assert list(table["strategy"]) == ["baseline", "abs"]
    assert set(table["selected"]) == {0}


def test_train_on_synthetic_scene(tmp_path):
    out = tmp_path / "synthetic"
    assert main(["train", "--synthetic", "--iterations", "2", "--no-densify", "--out", str(out)]) == 0
    assert len(list((out / "renders").glob("*.png"))) == 5
    assert (out / "final.ply").is_file()
