import pytest

from models.dcrn import dcrn_preset
from utils.error_handler import ConfigError
from utils.run_config import (
    DEFAULT_RUN_CONFIG,
    available_presets,
    dump_run_config,
    load_run_config,
    parse_override,
)


def test_presets_are_available():
    assert {"full", "toy", "tiny"} <= set(available_presets())
    for name in ("full", "toy", "tiny"):
        assert load_run_config(preset=name).preset == name


def test_tiny_preset_builds_model_configs():
    cfg = load_run_config(preset="tiny")
    assert cfg.dcrn_config() == dcrn_preset("tiny")
    rnnt = cfg.rnnt_config(vocab_size=3)
    assert (rnnt.vocab_size, rnnt.encoder_hidden, rnnt.joint_hidden) == (3, 4, 8)
    assert cfg.training.max_batches == 1
    assert cfg.spec_augment_config().freq_width_max == 4
    assert cfg.tri_stage(cfg.epochs.asr).total_epochs == 5
    assert cfg.fine_tune(2).table() == [4e-6, 4e-6]


def test_overrides_are_parsed_as_yaml_scalars():
    assert parse_override("training.batch_size=4") == (["training", "batch_size"], 4)
    assert parse_override("name=my run") == (["name"], "my run")
    cfg = load_run_config(preset="tiny", overrides=[
        "training.batch_size=4",
        "augment.noise_snr_range=[5, 10]",
        "dcrn.loss=mse",
    ])
    assert cfg.training.batch_size == 4
    assert cfg.augment_policy().noise_snr_range == (5.0, 10.0)
    assert cfg.dcrn_config().loss == "mse"


def test_override_selects_preset():
    assert load_run_config(overrides=["preset=tiny"]).corpus.n_utts == 8


def test_run_file_sits_between_preset_and_overrides():
    cfg = load_run_config(DEFAULT_RUN_CONFIG)
    assert cfg.name == "toy-combined"
    assert cfg.training.threads == 2
    cfg = load_run_config(DEFAULT_RUN_CONFIG, overrides=["training.threads=3"])
    assert cfg.training.threads == 3


@pytest.mark.parametrize("overrides", [
    ["training.batchsize=4"],
    ["training.kl_pairs=s2s3"],
    ["augment.noise_prob=1.5"],
    ["corpus.vocab_size=17"],
    ["training"],
])
def test_invalid_overrides(overrides):
    with pytest.raises(ConfigError):
        load_run_config(preset="tiny", overrides=overrides)


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(preset="gigantic")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "list.yaml")


def test_runs_dir_defaults_to_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SERNNT_RUNS_DIR", str(tmp_path))
    cfg = load_run_config(preset="tiny", overrides=["name=probe"])
    assert cfg.run_dir == tmp_path / "probe"


def test_dump_and_reload(tmp_path):
    cfg = load_run_config(preset="tiny", overrides=["name=saved", "training.lambda_aux=0.25"])
    path = dump_run_config(cfg, tmp_path / "run.yaml")
    assert load_run_config(path) == cfg
