"""
Tests for the layered YAML configuration.
"""

from pathlib import Path

import pytest

from src.utils.config_loader import DEFAULT_CONFIG, ConfigValidationError, dump_config, load_config

REPO_CONFIG = Path(__file__).resolve().parents[2] / "config" / "mdc.yaml"


def write_yaml(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return str(path)


class TestLoadConfig:
    def test_defaults_only(self):
        config = load_config(None)
        assert config["block_dilations"] == [1, 3, 6, 9]
        assert config["fg_fraction"] == 0.30
        assert config["bg_threshold"] == 0.06
        assert config["online_mask_floor"] is None

    def test_shipped_config_is_valid(self):
        config = load_config(str(REPO_CONFIG))
        assert set(config) == set(DEFAULT_CONFIG)
        assert config["seg_mode"] in ("weak", "semi")

    def test_file_values_override_defaults(self, tmp_path):
        config = load_config(write_yaml(tmp_path, "seed: 11\nblock_dilations: [1, 2]\ncls_lr: 1\n"))
        assert config["seed"] == 11
        assert config["block_dilations"] == [1, 2]
        assert config["cls_lr"] == 1.0
        assert isinstance(config["cls_lr"], float)

    def test_overrides_win_and_none_is_skipped(self, tmp_path):
        config = load_config(write_yaml(tmp_path, "seed: 11\n"), overrides={"seed": 5, "output_root": None})
        assert config["seed"] == 5
        assert config["output_root"] == DEFAULT_CONFIG["output_root"]

    def test_env_substitution(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MDC_DATA_DIR", "/data/shapes")
        config = load_config(write_yaml(tmp_path, "data_dir: ${MDC_DATA_DIR}\n"))
        assert config["data_dir"] == "/data/shapes"

    def test_empty_file_gives_defaults(self, tmp_path):
        assert load_config(write_yaml(tmp_path, "")) == load_config(None)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "absent.yaml"))

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="dilation_rates"):
            load_config(write_yaml(tmp_path, "dilation_rates: [1, 3]\n"))
        with pytest.raises(ConfigValidationError):
            load_config(None, overrides={"epochs": 3})

    def test_non_mapping_rejected(self, tmp_path):
        with pytest.raises(ConfigValidationError):
            load_config(write_yaml(tmp_path, "- seed\n- 3\n"))

    @pytest.mark.parametrize("overrides", [
        {"fg_fraction": 1.0},
        {"bg_threshold": 1.5},
        {"block_dilations": [2, 3]},
        {"block_dilations": [1]},
        {"seg_mode": "full"},
        {"fusion_mode": "max"},
        {"mask_source": "block:x"},
        {"online_mask_floor": 1.5},
        {"shapes_min": 3, "shapes_max": 2},
        {"scale_min": 0.7, "scale_max": 0.5},
        {"num_classes": "five"},
        {"num_classes": 6},
        {"cls_batch": 0},
        {"weak_count": -1},
        {"seg_lr": -0.1},
        {"ablate_strong_fractions": [0.0]},
        {"ablate_train_seg": "yes"},
        {"backbone": "conv3x3:16"},
    ])
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigValidationError):
            load_config(None, overrides=overrides)

    def test_dump_round_trip(self, tmp_path):
        config = load_config(None, overrides={"seed": 4, "mask_source": "block:2"})
        path = tmp_path / "out" / "config.resolved.yaml"
        dump_config(config, path)
        assert load_config(str(path)) == config
