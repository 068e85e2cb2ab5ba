import numpy as np
import pandas as pd
import pytest

from hsplat.services.densify import DensifyConfig
from hsplat.services.scenes import image_scene
from hsplat.services.sweep import SWEEP_COLUMNS, threshold_sweep
from hsplat.services.trainer import TrainConfig
from hsplat.utils.synthetic import textured_image


@pytest.fixture()
def sweep_inputs():
    scene = image_scene(textured_image(24, 24, seed=2), n_init=9)
    config = TrainConfig(
        iterations=2,
        densify=DensifyConfig(densify_until=2),
        regime="image2d",
        loss_lambda_dssim=0.0,
        log_interval=1,
    )
    return scene, config


def test_huge_threshold_selects_nothing(tmp_path, sweep_inputs):
    scene, config = sweep_inputs
    details = threshold_sweep(scene, scene.initial_cloud, config, tau_p_values=[1e9], out_dir=str(tmp_path))
    assert list(details["strategy"]) == ["baseline", "abs"]
    assert set(details["selected"]) == {0}
    written = pd.read_csv(tmp_path / "sweep.csv")
    assert list(written.columns) == SWEEP_COLUMNS
    assert len(written) == 2
    assert (tmp_path / "sweep_details.csv").is_file()
    assert (tmp_path / "masks" / "abs_p1e+09_s0.01.png").is_file()


def test_abs_selects_at_least_as_many(sweep_inputs):
    scene, config = sweep_inputs
    details = threshold_sweep(scene, scene.initial_cloud, config, tau_p_values=[1e-7, 1e-5, 1e-4])
    assert list(details["tau_p"]) == [1e-7, 1e-7, 1e-5, 1e-5, 1e-4, 1e-4]
    for tau_p, cells in details.groupby("tau_p"):
        by_strategy = cells.set_index("strategy")
        assert by_strategy.loc["abs", "selected"] >= by_strategy.loc["baseline", "selected"]
    assert np.all(details["final_n"] == 9)
    assert np.all(details["bytes"] == 9 * 14 * 4)


def test_sweep_rows_do_not_depend_on_jobs(sweep_inputs):
    scene, config = sweep_inputs
    serial = threshold_sweep(scene, scene.initial_cloud, config, tau_p_values=[1e-6, 1e-5])
    parallel = threshold_sweep(scene, scene.initial_cloud, config, tau_p_values=[1e-6, 1e-5], jobs=2)
    pd.testing.assert_frame_equal(serial, parallel)
