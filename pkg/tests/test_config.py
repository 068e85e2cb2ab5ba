import logging

import pytest

from hsplat.config import (
    DEFAULT_CONFIG_PATH,
    build_train_config,
    load_config_file,
    merge_settings,
    parse_background,
    run_settings,
)
from hsplat.errors import ConfigError


def test_default_config_loads():
    values = load_config_file(DEFAULT_CONFIG_PATH, required=True)
    assert values["tau_p"] == 0.0002
    config = build_train_config(values)
    assert config.iterations == 30000
    assert config.densify.densify_until == 15000
    assert config.densify.strategy == "baseline"
    assert config.loss_lambda_dssim == 0.2


def test_yaml_error_reports_path_and_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("tau_p: 0.1\ntau_s: [0.1\nstrategy: abs\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config_file(str(path))
    assert excinfo.value.reason.startswith(f"{path}:")
    line = int(excinfo.value.reason[len(str(path)) + 1:].split(":")[0])
    assert line >= 2


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config_file(str(path))


def test_missing_required_file(tmp_path):
    assert load_config_file(str(tmp_path / "absent.yaml")) == {}
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "absent.yaml"), required=True)


def test_unknown_keys_warn(tmp_path, caplog):
    path = tmp_path / "extra.yaml"
    path.write_text("tau_p: 0.001\nmystery: 3\n")
    with caplog.at_level(logging.WARNING):
        values = load_config_file(str(path))
    assert "mystery" in caplog.text
    assert "mystery" not in merge_settings(values, {})


def test_overrides_win_and_none_is_ignored():
    merged = merge_settings({"tau_p": 0.1, "tau_s": 0.2}, {"tau_p": 0.3, "tau_s": None})
    assert merged == {"tau_p": 0.3, "tau_s": 0.2}


def test_densify_until_from_file_is_clamped():
    config = build_train_config({"densify_until": 15000}, {"iterations": 200})
    assert config.densify.densify_until == 200


def test_densify_until_override_is_not_clamped():
    with pytest.raises(ConfigError):
        build_train_config({}, {"iterations": 100, "densify_until": 200})
    config = build_train_config({}, {"iterations": 100, "densify_until": 200, "densify": False})
    assert not config.densify.enabled


def test_strict_numbers():
    with pytest.raises(ConfigError):
        build_train_config({"tau_p": "lots"})
    with pytest.raises(ConfigError):
        build_train_config({"iterations": True})
    with pytest.raises(ConfigError):
        build_train_config({"tau_p": -1.0})


def test_learning_rate_keys_map_to_groups():
    config = build_train_config({"position_lr_init": 0.01, "feature_lr": 0.02, "position_lr_delay_steps": 7})
    assert config.lr.positions_init == 0.01
    assert config.lr.color_coeffs == 0.02
    assert config.lr.positions_delay_steps == 7


def test_regime_and_flags():
    config = build_train_config(
        {"per_channel_abs": "yes", "gradient_space": "ndc", "strategy": "abs"}, {"iterations": 10}, regime="image2d"
    )
    assert config.regime == "image2d"
    assert config.per_channel_abs
    assert config.gradient_space == "ndc"
    assert config.densify.strategy == "abs"


def test_parse_background():
    assert parse_background(None) == (0.0, 0.0, 0.0)
    assert parse_background("0.1, 0.2,0.3") == (0.1, 0.2, 0.3)
    assert parse_background([1, 2, -1]) == (1.0, 1.0, 0.0)
    assert parse_background(0.5) == (0.5, 0.5, 0.5)
    with pytest.raises(ConfigError):
        parse_background("0.1,0.2")


def test_run_settings(tmp_path):
    run = run_settings({"sh_degree": 2, "out": str(tmp_path)}, {"jobs": 3})
    assert run["sh_degree"] == 2
    assert run["jobs"] == 3
    assert run["out"] == str(tmp_path)
    assert run["n_init"] == 0
    assert set(run) == {"out", "sh_degree", "n_init", "jobs", "holdout_every"}
