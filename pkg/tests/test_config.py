import os

import pytest

from prefloop.config import (PipelineConfig, config_from_dict, config_to_dict,
                             desk_profile, load_config, paper_profile,
                             parse_config, resolve_out_dir, save_config,
                             serialize_config)
from prefloop.errors import ConfigurationError


def test_roundtrip_identity():
    cfg = desk_profile(seed=7)
    cfg.prefs_per_task = 123
    cfg.combine.alpha = 0.3
    text = serialize_config(cfg)
    back = parse_config(text)
    assert config_to_dict(back) == config_to_dict(cfg)
    # and a second cycle is stable
    assert serialize_config(back) == text


def test_file_roundtrip(tmp_path):
    cfg = desk_profile(seed=3)
    path = tmp_path / "cfg.toml"
    save_config(cfg, path)
    loaded = load_config(path)
    assert config_to_dict(loaded) == config_to_dict(cfg)


def test_paper_profile_embeds_published_hyperparameters():
    cfg = paper_profile()
    assert cfg.ppo.clip_eps == 0.2
    assert cfg.ppo.gamma == 0.96
    assert cfg.ppo.gae_lambda == 0.95
    assert cfg.ppo.lr == 3e-4
    assert cfg.ppo.minibatches == 4
    assert cfg.ppo.opt_epochs == 5
    assert cfg.ppo.rollout_len == 8
    assert cfg.ppo.max_grad_norm == 1.0
    assert cfg.ppo.desired_kl == 0.016
    assert cfg.ppo.init_noise_std == 0.8
    assert cfg.ppo.hidden == (1024, 1024, 512)
    assert cfg.rm.batch_size == 4096
    assert cfg.rm.epochs == 50000
    assert cfg.rm.lr == 1e-3
    assert cfg.rm.lr_step_size == 1000
    assert cfg.rm.lr_gamma == 0.5
    assert cfg.window_size == 8
    assert cfg.iterations == 4
    assert cfg.prefs_per_task == 1000


def test_task_overlap_rejected():
    with pytest.raises(ConfigurationError):
        PipelineConfig(train_tasks=["REACH3"], unseen_tasks=["REACH3"])


def test_unknown_task_rejected():
    with pytest.raises(ConfigurationError):
        PipelineConfig(train_tasks=["JUMP3"])


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown config keys"):
        config_from_dict({"sneaky": 1})
    with pytest.raises(ConfigurationError, match="unknown keys"):
        config_from_dict({"ppo": {"warp_speed": 9}})


def test_invalid_toml_rejected():
    with pytest.raises(ConfigurationError, match="invalid TOML"):
        parse_config("= nope")


def test_labeler_mode_validated():
    with pytest.raises(ConfigurationError):
        PipelineConfig(labeler="crowd")


def test_resolve_out_dir_priority(monkeypatch):
    cfg = desk_profile()
    cfg.out_dir = "from-config"
    monkeypatch.delenv("PREFLOOP_OUT", raising=False)
    assert resolve_out_dir(None, cfg) == "from-config"
    monkeypatch.setenv("PREFLOOP_OUT", "from-env")
    assert resolve_out_dir(None, cfg) == "from-env"
    assert resolve_out_dir("from-cli", cfg) == "from-cli"
