import logging

import pytest

from utils.error_handler import error_handler
from utils.feature_flags import FeatureFlags, feature_flags, get_feature_config, is_feature_enabled
from utils.state_logger import finalize_logging
from workflows.graph_builder import start_run


@pytest.fixture
def flags():
    """The process-wide flags, restored after the test."""
    saved = {name: f.enabled for name, f in feature_flags._features.items()}
    yield feature_flags
    for name in list(feature_flags._features):
        if name not in saved:
            del feature_flags._features[name]
    for name, enabled in saved.items():
        feature_flags._features[name].enabled = enabled


def test_singleton_and_defaults(flags):
    assert FeatureFlags() is flags
    assert is_feature_enabled("spec_augment")
    assert not is_feature_enabled("mask_dump")
    assert is_feature_enabled("freeze_audit")
    assert get_feature_config("parallel_batches")["max_workers"] == 4
    assert not is_feature_enabled("no_such_flag")
    assert get_feature_config("no_such_flag") == {}


def test_environment_overrides_config(flags, monkeypatch):
    monkeypatch.setenv("FEATURE_MASK_DUMP", "true")
    assert is_feature_enabled("mask_dump")
    monkeypatch.setenv("FEATURE_SPEC_AUGMENT", "off")
    assert not is_feature_enabled("spec_augment")


def test_enable_and_disable(flags, monkeypatch):
    monkeypatch.delenv("FEATURE_MASK_DUMP", raising=False)
    flags.enable_feature("mask_dump")
    assert is_feature_enabled("mask_dump")
    flags.disable_feature("mask_dump")
    assert not is_feature_enabled("mask_dump")
    flags.enable_feature("extra_logging")
    assert flags.get_all_features()["extra_logging"]


def test_feature_states_are_logged(flags, monkeypatch, caplog):
    monkeypatch.setenv("FEATURE_MASK_DUMP", "yes")
    with caplog.at_level(logging.INFO, logger="utils.feature_flags"):
        states = flags.log_feature_states()
    assert states["mask_dump"] and states["freeze_audit"]
    assert list(states) == sorted(states)
    assert "Feature 'mask_dump': ENABLED" in caplog.text


def test_run_start_records_feature_states(flags, monkeypatch, tiny_config):
    monkeypatch.setenv("FEATURE_SPEC_AUGMENT", "false")
    monkeypatch.setattr(error_handler, "log_dir", error_handler.log_dir)
    start_run(tiny_config)
    summary = finalize_logging()
    (event,) = [e for e in summary["events"] if e["event"] == "features"]
    assert event["spec_augment"] is False
    assert event["parallel_batches"] is True
