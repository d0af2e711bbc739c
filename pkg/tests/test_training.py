import logging

import numpy as np
import pytest

from models.dcrn import build_dcrn
from models.layers import Linear
from models.rnnt import build_rnnt
from models.selection import build_selection
from models.tensor import Tensor
from nodes import asr_trainer
from nodes.asr_trainer import AsrOptions, train_asr
from nodes.enhancer_trainer import train_enhancer
from nodes.joint_finetuner import JointOptions, fine_tune_joint
from nodes.selection_trainer import SelectionPhases, train_selection
from nodes.training_critic import FreezeCritic, LossCritic, phase_critics, should_continue, training_critic_node
from nodes.training_loop import TrainerSettings, clone, epoch_batches, load_examples, run_phase
from utils.error_handler import ConfigError, DataError, FreezeViolationError, NumericalError, UsageError, error_handler
from utils.schedule import ConstantSchedule

X = Tensor(np.linspace(-1.0, 1.0, 12).reshape(4, 3))


def _toy_phase(settings, epochs=2, seed=0):
    first = Linear(3, 2, np.random.default_rng(seed))
    second = Linear(2, 1, np.random.default_rng(seed + 1))

    def batch_loss(epoch, batch, indices):
        return (second(first(X)) * second(first(X))).mean()

    def validate():
        with_grad = second(first(X))
        return float(np.mean(with_grad.data ** 2)), None

    result = run_phase("toy", 1, {"first": first}, {"second": second}, ConstantSchedule(epochs, 1e-2),
                       4, batch_loss, validate, settings)
    return first, second, result


def test_run_phase_keeps_frozen_groups_fixed():
    settings = TrainerSettings(batch_size=2)
    before = Linear(2, 1, np.random.default_rng(1)).checksum()
    untouched = Linear(3, 2, np.random.default_rng(0)).checksum()

    first, second, result = _toy_phase(settings)
    assert second.checksum() == before
    assert first.checksum() != untouched
    assert result.frozen_before == result.frozen_after == {"second": before}
    assert result.trainable == ["first"]
    assert first.trained_by == ["toy"] and not second.trained
    assert not second.frozen
    assert len(result.history) == 2
    assert result.best_val_loss == min(row["val_loss"] for row in result.history)
    assert settings.phase_results == [result]


def test_run_phase_is_deterministic():
    a, _, _ = _toy_phase(TrainerSettings(batch_size=2, seed=3))
    b, _, _ = _toy_phase(TrainerSettings(batch_size=2, seed=3))
    assert a.checksum() == b.checksum()


def test_run_phase_rejects_bad_input():
    layer = Linear(3, 1, np.random.default_rng(0))
    settings = TrainerSettings()
    with pytest.raises(DataError):
        run_phase("empty", 1, {"m": layer}, {}, ConstantSchedule(1), 0, None, None, settings)

    def nan_loss(epoch, batch, indices):
        return layer(X).sum() * float("nan")

    with pytest.raises(NumericalError):
        run_phase("nan", 1, {"m": layer}, {}, ConstantSchedule(1), 4, nan_loss, lambda: (1.0, None), settings)

    def fine_loss(epoch, batch, indices):
        return layer(X).mean()

    with pytest.raises(NumericalError):
        run_phase("no_val", 1, {"m": layer}, {}, ConstantSchedule(1), 4, fine_loss,
                  lambda: (float("inf"), None), settings)


def test_epoch_batches():
    rng = np.random.default_rng(0)
    batches = epoch_batches(7, 3, rng)
    assert [len(b) for b in batches] == [3, 3, 1]
    assert sorted(i for b in batches for i in b) == list(range(7))
    assert len(epoch_batches(7, 3, np.random.default_rng(0), max_batches=2)) == 2


def test_critics():
    history = [{"epoch": 0, "train_loss": 1.0, "val_loss": float("nan")}]
    bad_loss = LossCritic().validate({"phase": "p", "history": history})
    assert not bad_loss.is_valid and "val_loss" in bad_loss.issues[0]
    with pytest.raises(NumericalError):
        LossCritic().enforce({"phase": "p", "history": history})

    moved = {"phase": "p", "frozen_before": {"dcrn": "a"}, "frozen_after": {"dcrn": "b"}}
    assert FreezeCritic().validate(moved).issues == ["p: frozen group 'dcrn' changed"]
    with pytest.raises(FreezeViolationError):
        FreezeCritic().enforce(moved)
    assert FreezeCritic().validate({"phase": "p", "frozen_before": {"dcrn": "a"},
                                    "frozen_after": {"dcrn": "a"}}).is_valid


def test_critic_node_and_routing(monkeypatch, tmp_path):
    monkeypatch.setattr(error_handler, "log_dir", str(tmp_path))
    _, _, result = _toy_phase(TrainerSettings(batch_size=2))
    state = {"phase_results": [result.as_dict()]}
    update = training_critic_node(state)
    assert set(update["critic_results"]) == {"toy/freeze", "toy/loss"}
    assert should_continue(update) == "continue"
    assert should_continue({"critic_results": {"x/loss": {"is_valid": False}}}) == "stop"


def test_freeze_check_cannot_be_switched_off(monkeypatch):
    monkeypatch.setenv("FEATURE_FREEZE_AUDIT", "false")
    monkeypatch.setenv("FREEZE_CRITIC_ENABLED", "false")
    assert [c.name for c in phase_critics()] == ["freeze", "loss"]

    first = Linear(3, 2, np.random.default_rng(0))
    second = Linear(2, 1, np.random.default_rng(1))

    def tampering_loss(epoch, batch, indices):
        second.bias.data = second.bias.data + 1.0
        return (first(X) * first(X)).mean()

    with pytest.raises(FreezeViolationError):
        run_phase("tamper", 1, {"first": first}, {"second": second}, ConstantSchedule(1, 1e-2), 4,
                  tampering_loss, lambda: (1.0, None), TrainerSettings(batch_size=2))


def test_freeze_audit_flag_only_controls_checksum_logging(monkeypatch, caplog):
    with caplog.at_level(logging.INFO, logger="nodes.training_critic"):
        monkeypatch.setenv("FEATURE_FREEZE_AUDIT", "false")
        _toy_phase(TrainerSettings(batch_size=2))
        assert "frozen group 'second' checksum" not in caplog.text
        monkeypatch.setenv("FEATURE_FREEZE_AUDIT", "true")
        _, second, _ = _toy_phase(TrainerSettings(batch_size=2))
    assert f"toy: frozen group 'second' checksum {second.checksum()}" in caplog.text


def test_disabled_loss_critic_is_skipped_everywhere(monkeypatch, tmp_path):
    monkeypatch.setattr(error_handler, "log_dir", str(tmp_path))
    calls = []
    monkeypatch.setattr(LossCritic, "enforce", lambda self, phase: calls.append(phase["phase"]))
    monkeypatch.setenv("LOSS_CRITIC_ENABLED", "false")
    assert [c.name for c in phase_critics()] == ["freeze"]
    _, _, result = _toy_phase(TrainerSettings(batch_size=2))
    update = training_critic_node({"phase_results": [result.as_dict()]})
    assert set(update["critic_results"]) == {"toy/freeze"}
    assert calls == []

    monkeypatch.setenv("LOSS_CRITIC_ENABLED", "true")
    _toy_phase(TrainerSettings(batch_size=2))
    assert calls == ["toy"]


@pytest.fixture
def setup(tiny_config, tiny_corpus):
    vocabulary = tiny_corpus.vocabulary
    return {
        "config": tiny_config,
        "vocabulary": vocabulary,
        "train": load_examples(tiny_corpus, "train"),
        "valid": load_examples(tiny_corpus, "valid"),
        "noise": tiny_corpus.noise_waveforms("train"),
        "settings": TrainerSettings(batch_size=2, max_batches=1),
        "policy": tiny_config.augment_policy(),
    }


def _rnnt(setup, seed=0):
    return build_rnnt(setup["config"].rnnt_config(setup["vocabulary"].size), seed=seed)


def _trained_dcrn(setup):
    dcrn = build_dcrn(setup["config"].dcrn_config(), seed=0)
    dcrn.mark_trained("fixture")
    return dcrn


def test_kl_options_need_an_enhancer():
    with pytest.raises(ConfigError):
        AsrOptions(augment_noise=True, kl_pairs="uniform13_24").check(None)
    with pytest.raises(ConfigError):
        AsrOptions(augment_enhance=True).check(None)
    with pytest.raises(ConfigError):
        AsrOptions(kl_pairs="s9s9").check(None)
    with pytest.raises(ConfigError):
        JointOptions(kl_pairs="uniform13_24").check()
    AsrOptions(augment_noise=True, kl_pairs="s1s2").check(None)
    assert AsrOptions(augment_noise=True, kl_pairs="s1s2").describe() == "noise+KL(s1s2)"
    assert AsrOptions().describe() == "baseline"


def test_train_asr_baseline(setup):
    rnnt = _rnnt(setup)
    start = rnnt.checksum()
    train_asr(rnnt, setup["train"], setup["policy"], ConstantSchedule(1, 1e-3), AsrOptions(),
              setup["settings"], setup["vocabulary"], valid=setup["valid"])
    assert rnnt.checksum() != start
    assert rnnt.trained_by == ["asr"]
    (result,) = setup["settings"].phase_results
    assert result.frozen_before == {}


def test_train_asr_rejects_missing_inputs(setup):
    with pytest.raises(DataError):
        train_asr(_rnnt(setup), [], setup["policy"], ConstantSchedule(1), AsrOptions(), setup["settings"],
                  setup["vocabulary"])
    with pytest.raises(DataError):
        train_asr(_rnnt(setup), setup["train"], setup["policy"], ConstantSchedule(1),
                  AsrOptions(augment_noise=True), setup["settings"], setup["vocabulary"])


def test_train_asr_starts_from_init_model(setup, monkeypatch):
    source = _rnnt(setup, seed=7)
    seen = {}

    def fake_run_phase(phase, step, trainable, frozen, *args, **kwargs):
        seen["checksum"] = trainable["rnnt"].checksum()
        seen["frozen"] = sorted(frozen)

    monkeypatch.setattr(asr_trainer, "run_phase", fake_run_phase)
    target = _rnnt(setup, seed=0)
    train_asr(target, setup["train"], setup["policy"], ConstantSchedule(1), AsrOptions(init_from=source),
              setup["settings"], setup["vocabulary"])
    assert seen == {"checksum": source.checksum(), "frozen": []}


def test_step2_leaves_enhancer_untouched(setup):
    dcrn = _trained_dcrn(setup)
    before = dcrn.checksum()
    step1 = _rnnt(setup)
    step1.mark_trained("asr")
    rnnt = _rnnt(setup, seed=1)
    options = AsrOptions(train_on_enhanced=True, init_from=step1)
    train_asr(rnnt, setup["train"], setup["policy"], ConstantSchedule(1, 1e-3), options, setup["settings"],
              setup["vocabulary"], dcrn=dcrn, valid=setup["valid"], phase="step2", step=2)
    assert dcrn.checksum() == before
    assert dcrn.trained_by == ["fixture"]
    (result,) = setup["settings"].phase_results
    assert result.frozen_before == result.frozen_after == {"dcrn": before}


def test_train_asr_with_consistency_pairs(setup):
    rnnt = _rnnt(setup)
    options = AsrOptions(augment_noise=True, augment_enhance=True, kl_pairs="uniform13_24")
    train_asr(rnnt, setup["train"], setup["policy"], ConstantSchedule(1, 1e-3), options, setup["settings"],
              setup["vocabulary"], noise_corpus=setup["noise"], dcrn=_trained_dcrn(setup), valid=setup["valid"])
    assert rnnt.trained


def test_joint_fine_tuning_updates_both_models(setup):
    dcrn = _trained_dcrn(setup)
    rnnt = _rnnt(setup)
    rnnt.mark_trained("step2")
    dcrn_copy, rnnt_copy = clone(dcrn), clone(rnnt)
    settings = TrainerSettings(batch_size=1, max_batches=1)
    fine_tune_joint(rnnt_copy, dcrn_copy, setup["train"], setup["policy"], ConstantSchedule(1, 1e-3),
                    JointOptions(), settings, setup["vocabulary"], valid=setup["valid"])
    assert dcrn_copy.checksum() != dcrn.checksum()
    assert rnnt_copy.checksum() != rnnt.checksum()
    assert dcrn_copy.trained_by == ["fixture", "step3"]
    assert settings.phase_results[0].trainable == ["dcrn", "rnnt"]


def test_joint_fine_tuning_needs_trained_models(setup):
    with pytest.raises(UsageError):
        fine_tune_joint(_rnnt(setup), _trained_dcrn(setup), setup["train"], setup["policy"], ConstantSchedule(1),
                        JointOptions(), setup["settings"], setup["vocabulary"])


def test_selection_phases(setup):
    dcrn = _trained_dcrn(setup)
    rnnt = _rnnt(setup)
    rnnt.mark_trained("step3")
    sm = build_selection(setup["config"].selection_config(), seed=0)
    dcrn_before, rnnt_before = dcrn.checksum(), rnnt.checksum()
    phases = SelectionPhases.constant(1, 1e-3, 1, 1e-3)

    _, _, (first, second) = train_selection(sm, rnnt, dcrn, setup["train"], phases, setup["settings"],
                                            setup["vocabulary"], valid=setup["valid"])
    assert first.trainable == ["selection"]
    assert first.frozen_before == {"dcrn": dcrn_before, "rnnt": rnnt_before}
    assert first.frozen_after == first.frozen_before
    assert (first.step, second.step) == (4, 5)
    assert second.trainable == ["rnnt", "selection"]
    assert second.frozen_after == {"dcrn": dcrn_before}
    assert rnnt.checksum() != rnnt_before
    assert sm.trained_by == ["selection_phase1", "selection_phase2"]


def test_selection_needs_trained_models(setup):
    sm = build_selection(setup["config"].selection_config(), seed=0)
    with pytest.raises(UsageError, match="rnnt"):
        train_selection(sm, _rnnt(setup), _trained_dcrn(setup), setup["train"],
                        SelectionPhases.constant(1, 1e-3, 1, 1e-3), setup["settings"], setup["vocabulary"])


def test_train_enhancer_updates_only_the_dcrn(setup):
    dcrn = build_dcrn(setup["config"].dcrn_config(), seed=0)
    start = dcrn.checksum()
    clean = [e.audio for e in setup["train"]]
    train_enhancer(dcrn, clean, setup["noise"], setup["policy"], ConstantSchedule(1, 1e-3), setup["settings"],
                   valid_corpus=[e.audio for e in setup["valid"]])
    assert dcrn.checksum() != start
    assert dcrn.trained_by == ["enhancer"]
    (result,) = setup["settings"].phase_results
    assert result.trainable == ["dcrn"] and result.frozen_before == {}
    assert np.isfinite(result.best_val_loss)


def test_train_enhancer_needs_noise(setup):
    dcrn = build_dcrn(setup["config"].dcrn_config(), seed=0)
    with pytest.raises(DataError):
        train_enhancer(dcrn, [e.audio for e in setup["train"]], [], setup["policy"], ConstantSchedule(1),
                       setup["settings"])
