"""Tests for the configuration dataclasses.

This module covers defaults, validation rules, presets, dotted overrides and
loading run configurations from JSON files.
"""

import json

import pytest

from mam.config import (
    ALIGN_METHODS,
    AlignmentConfig,
    DataConfig,
    EvalConfig,
    FoldConfig,
    ModelConfig,
    ObjectiveConfig,
    RunConfig,
    ScheduleConfig,
    TrainConfig,
    apply_overrides,
    load_config,
    preset,
    save_config,
)
from mam.utils import ConfigError


class TestDefaults:
    """Default values of every section."""

    def test_default_run_config(self):
        """Test that the default configuration is valid."""
        config = RunConfig()
        assert config.is_valid()
        assert config.schedule.kind == "cosine"
        assert config.schedule.num_steps == 50
        assert config.alignment.method == "llma"
        assert config.alignment.temperature == 0.1
        assert config.objective.alpha_mode == "uncertainty"
        assert config.train.ema_decay == 0.999
        assert config.runner == "auto"

    def test_alpha_lr_falls_back_to_lr_theta(self):
        """Test that the alignment weight shares lr_theta unless set."""
        assert TrainConfig(lr_theta=3e-4).alpha_lr == 3e-4
        assert TrainConfig(lr_theta=3e-4, lr_alpha=1e-2).alpha_lr == 1e-2

    def test_feed_forward_width(self):
        """Test that ffn_dim=0 means four times the model width."""
        cfg = ModelConfig(d_model=16).for_modality(3, 2, 10)
        assert cfg.ffn_width == 64
        assert cfg.d_latent == 16
        assert ModelConfig(ffn_dim=100).for_modality(3, 2, 10).ffn_width == 100

    def test_data_source_kind(self):
        assert DataConfig().is_synthetic
        assert not DataConfig(source="data/gait.csv").is_synthetic


class TestValidation:
    """Each rule aborts construction with a ConfigError."""

    @pytest.mark.parametrize(
        "factory,expected_error",
        [
            (lambda: ScheduleConfig(kind="sigmoid"), "schedule kind must be one of"),
            (lambda: ScheduleConfig(num_steps=0), "num_steps must be a positive integer"),
            (lambda: ScheduleConfig(retention_min=1.0), "retention_min must lie strictly between 0 and 1"),
            (lambda: ModelConfig(d_model=30, n_heads=4), "d_model must be divisible by n_heads"),
            (lambda: ModelConfig(dropout=1.0), "dropout must lie in [0, 1)"),
            (lambda: AlignmentConfig(method="cca"), "alignment method must be one of"),
            (lambda: AlignmentConfig(temperature=0.0), "temperature must be positive"),
            (lambda: AlignmentConfig(vicreg_weights=(1.0, 2.0)), "vicreg_weights must be three non-negative numbers"),
            (lambda: AlignmentConfig(use_cov=1), "symmetrize, use_contrast and use_cov must be boolean values"),
            (lambda: ObjectiveConfig(alpha_mode="fixed"), "alpha_mode must be one of"),
            (lambda: TrainConfig(ema_decay=1.0), "ema_decay must lie in [0, 1)"),
            (lambda: TrainConfig(batch_size=0), "batch_size must be a positive integer"),
            (lambda: TrainConfig(lr_theta=-1.0), "lr_theta must be non-negative"),
            (lambda: TrainConfig(epochs=True), "epochs must be a non-negative integer"),
            (lambda: FoldConfig(k_subjects=0), "k_subjects must be a positive integer"),
            (lambda: DataConfig(n_regimes=28), "n_regimes must not exceed 27"),
            (lambda: DataConfig(obs_kind="cubic"), "obs_kind must be one of"),
            (lambda: EvalConfig(horizon_frac=1.0), "horizon_frac must lie strictly between 0 and 1"),
            (lambda: RunConfig(runner="threads"), "runner must be one of"),
        ],
    )
    def test_invalid_values(self, factory, expected_error):
        """Test validation messages of invalid values."""
        with pytest.raises(ConfigError) as excinfo:
            factory()
        assert f"Invalid configuration: {expected_error}" in str(excinfo.value)

    def test_cross_section_rules(self):
        """Test rules that relate two sections."""
        with pytest.raises(ConfigError, match="max_len"):
            RunConfig(model=ModelConfig(max_len=32), data=DataConfig(seq_len=64))
        with pytest.raises(ConfigError, match="window_len must not exceed"):
            RunConfig(alignment=AlignmentConfig(window_len=80))
        with pytest.raises(ConfigError, match="at least 2 for covariance"):
            RunConfig(alignment=AlignmentConfig(window_len=1))
        assert RunConfig(alignment=AlignmentConfig(window_len=1, use_cov=False)).is_valid()

    def test_zero_epochs_and_zero_lr_are_allowed(self):
        assert TrainConfig(epochs=0, lr_theta=0.0, lr_phi=0.0).is_valid()

    def test_config_error_is_a_value_error(self):
        with pytest.raises(ValueError):
            ScheduleConfig(num_steps=-1)


class TestAlignmentMethods:
    def test_mse_alias(self):
        assert AlignmentConfig(method="mse").method == "latent_mse"

    @pytest.mark.parametrize("method", ALIGN_METHODS)
    def test_every_method_is_accepted(self, method):
        assert AlignmentConfig(method=method).method == method

    @pytest.mark.parametrize(
        ("method", "use_contrast", "use_cov", "enabled"),
        [
            ("llma", True, True, True),
            ("llma", False, True, True),
            ("llma", False, False, False),
            ("none", True, True, False),
            ("barlow", False, False, True),
        ],
    )
    def test_enabled(self, method, use_contrast, use_cov, enabled):
        cfg = AlignmentConfig(method=method, use_contrast=use_contrast, use_cov=use_cov)
        assert cfg.enabled is enabled


class TestPresets:
    def test_desk_is_the_default(self):
        assert preset() == RunConfig()

    def test_paper_preset(self):
        config = preset("paper")
        assert (config.model.d_model, config.model.n_layers_enc, config.model.n_heads) == (128, 4, 8)
        assert config.data.seq_len == 300
        assert config.alignment.window_len == 30

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="Unknown preset"):
            preset("laptop")


class TestOverrides:
    def test_dotted_overrides(self):
        config = preset().with_overrides(["train.epochs=3", "alignment.method=none", "name=quick", "train.adam_betas=[0.5, 0.9]"])
        assert config.train.epochs == 3
        assert config.alignment.method == "none"
        assert config.name == "quick"
        assert config.train.adam_betas == (0.5, 0.9)

    def test_overrides_do_not_mutate_input(self):
        data = preset().to_dict()
        apply_overrides(data, ["train.epochs=7"])
        assert data["train"]["epochs"] == 20

    @pytest.mark.parametrize(
        ("override", "match"),
        [
            ("train.epochs", "key=value"),
            ("=3", "key=value"),
            ("training.epochs=3", "Unknown override section"),
            ("train.epoch=3", "Unknown override key"),
            ("train.epochs=-1", "epochs must be a non-negative integer"),
        ],
    )
    def test_bad_overrides(self, override, match):
        with pytest.raises(ConfigError, match=match):
            preset().with_overrides([override])

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(ConfigError, match="Unknown RunConfig keys: extra"):
            RunConfig.from_dict({"extra": 1})
        with pytest.raises(ConfigError, match="Unknown TrainConfig keys: lr"):
            RunConfig.from_dict({"train": {"lr": 0.1}})


class TestFiles:
    def test_save_and_load_round_trip(self, tmp_path):
        config = preset("paper").with_overrides(["train.seed=4"])
        save_config(config, tmp_path / "config.json")
        assert load_config(tmp_path / "config.json") == config

    def test_partial_file_is_merged_onto_desk(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"train": {"epochs": 2}, "name": "partial"}), encoding="utf-8")
        config = load_config(path, ["train.batch_size=8"])
        assert config.train.epochs == 2
        assert config.train.batch_size == 8
        assert config.train.lr_theta == TrainConfig().lr_theta
        assert config.name == "partial"

    @pytest.mark.parametrize("content", [None, "{not json", "[1, 2]"])
    def test_unreadable_file(self, tmp_path, content):
        path = tmp_path / "config.json"
        if content is not None:
            path.write_text(content, encoding="utf-8")
        with pytest.raises(ConfigError, match="Cannot read config"):
            load_config(path)
