import numpy as np
import pandas as pd
import pytest

from models.dcrn import build_dcrn, dcrn_preset
from utils import metrics
from utils.dsp import Waveform
from utils.error_handler import DataError, ShapeError
from utils.metrics import si_snr, wer, werr, werr_from_summaries


def test_si_snr_of_identical_signals_is_capped():
    x = np.random.default_rng(0).normal(size=1000)
    assert si_snr(x, x) == metrics.SI_SNR_CAP_DB
    assert si_snr(3.0 * x, x) == metrics.SI_SNR_CAP_DB


def test_si_snr_of_orthogonal_equal_power_noise_is_zero():
    t = np.arange(1600)
    ref = np.sin(2 * np.pi * 10 * t / 1600)
    noise = np.cos(2 * np.pi * 10 * t / 1600)
    assert si_snr(ref + noise, ref) == pytest.approx(0.0, abs=1e-9)


def test_si_snr_is_scale_invariant():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=800)
    est = ref + 0.3 * rng.normal(size=800)
    base = si_snr(est, ref)
    for alpha in (0.01, 0.5, 7.0):
        assert si_snr(alpha * est, ref) == pytest.approx(base, abs=1e-9)
    assert si_snr(Waveform(est), Waveform(ref)) == base


def test_si_snr_errors():
    with pytest.raises(ShapeError):
        si_snr(np.ones(4), np.ones(5))
    with pytest.raises(DataError):
        si_snr(np.arange(4.0), np.full(4, 2.0))


@pytest.mark.parametrize("ref,hyp,subs,dels,ins,percent", [
    ("a b c", "a b c", 0, 0, 0, 0.0),
    ("a b c", "a c", 0, 1, 0, 100.0 / 3),
    ("a", "b c", 1, 0, 1, 200.0),
    ("a b", "", 0, 2, 0, 100.0),
    ("a b c d", "a x c d e", 1, 0, 1, 50.0),
])
def test_wer_examples(ref, hyp, subs, dels, ins, percent):
    result = wer(ref, hyp)
    assert (result.substitutions, result.deletions, result.insertions) == (subs, dels, ins)
    assert result.percent == pytest.approx(percent)


def test_wer_needs_reference():
    with pytest.raises(DataError):
        wer("", "a")


def test_corpus_wer_pools_edits():
    total = metrics.corpus_wer([("a b", "a"), ("c d e f", "c d e f")])
    assert total.edits == 1 and total.ref_words == 6
    with pytest.raises(DataError):
        metrics.corpus_wer([])


@pytest.mark.parametrize("clean_new,noisy_new,average", [
    (13.0, 17.4, 11.2),
    (13.4, 18.0, 8.3),
    (12.6, 17.1, 13.4),
])
def test_werr_averages(clean_new, noisy_new, average):
    report = werr(14.8, 19.4, clean_new, noisy_new)
    assert report.werr_avg == pytest.approx(average, abs=0.05)
    assert report.werr_avg == pytest.approx((report.werr_clean + report.werr_noisy) / 2)


def test_werr_needs_positive_baseline():
    with pytest.raises(DataError):
        werr(0.0, 10.0, 1.0, 1.0)


def _summary(path, clean, noisy):
    pd.DataFrame([
        {"split": "test-clean", "utterances": 10, "wer": clean, "si_snr": 20.0},
        {"split": "test-noisy", "utterances": 10, "wer": noisy, "si_snr": 5.0},
    ]).to_csv(path, index=False)
    return path


def test_werr_from_summary_files(tmp_path):
    base = _summary(tmp_path / "base.csv", 14.8, 19.4)
    new = _summary(tmp_path / "new.csv", 13.0, 17.4)
    report = werr_from_summaries(base, new)
    assert report.werr_avg == pytest.approx(11.24, abs=0.01)
    assert list(metrics.werr_table(report).columns)[-1] == "werr_avg"


def test_summary_files_are_checked(tmp_path):
    base = _summary(tmp_path / "base.csv", 14.8, 19.4)
    with pytest.raises(DataError):
        werr_from_summaries(base, tmp_path / "missing.csv")
    pd.DataFrame([{"split": "test-clean", "wer": 1.0}]).to_csv(tmp_path / "partial.csv", index=False)
    with pytest.raises(DataError):
        werr_from_summaries(base, tmp_path / "partial.csv")
    pd.DataFrame([{"name": "x"}]).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(DataError):
        metrics.read_summary(tmp_path / "bad.csv")


def test_summarize_utterances():
    rows = pd.DataFrame([
        {"id": "u1", "split": "test-clean", "wer": 0.0, "si_snr": 10.0, "reference": "a b", "hypothesis": "a b"},
        {"id": "u2", "split": "test-clean", "wer": 50.0, "si_snr": 20.0, "reference": "a b", "hypothesis": "a"},
        {"id": "u3", "split": "test-noisy", "wer": 100.0, "si_snr": None, "reference": "c", "hypothesis": "d"},
    ])
    summary = metrics.summarize_utterances(rows).set_index("split")
    assert summary.loc["test-clean", "utterances"] == 2
    assert summary.loc["test-clean", "wer"] == pytest.approx(25.0)
    assert summary.loc["test-clean", "si_snr"] == pytest.approx(15.0)
    assert summary.loc["test-noisy", "wer"] == pytest.approx(100.0)
    assert np.isnan(summary.loc["test-noisy", "si_snr"])


def test_evaluate_enhancer_reports_every_snr():
    model = build_dcrn(dcrn_preset("tiny"))
    rng = np.random.default_rng(2)
    clean = [Waveform(0.3 * rng.normal(size=160)) for _ in range(2)]
    noise = Waveform(rng.normal(size=100))
    table = metrics.evaluate_enhancer(model, clean, noise, snrs=(0.0, 5.0))
    assert list(table["snr_db"]) == [0.0, 5.0]
    assert list(table.columns) == ["snr_db", "input_si_snr", "output_si_snr", "improvement"]
    assert table.loc[0, "input_si_snr"] == pytest.approx(0.0, abs=3.0)
