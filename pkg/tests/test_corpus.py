import numpy as np
import pandas as pd
import pytest

from utils import corpus
from utils.corpus import MANIFEST_COLUMNS, SplitSizes, load_manifest, synth_corpus, synth_noise
from utils.dsp import measured_snr
from utils.error_handler import ConfigError, DataError


def test_split_sizes(tiny_corpus):
    assert SplitSizes.for_total(8).as_dict() == {"train": 5, "valid": 1, "test-clean": 1, "test-noisy": 1}
    assert {s: len(tiny_corpus.split(s)) for s in corpus.SPLITS} == SplitSizes.for_total(8).as_dict()
    assert SplitSizes.for_total(100).as_dict() == {"train": 70, "valid": 10, "test-clean": 10, "test-noisy": 10}
    with pytest.raises(ConfigError):
        SplitSizes.for_total(3)


def test_audio_length_follows_transcript(tiny_corpus):
    for utt in tiny_corpus.entries:
        symbols = len(utt.transcript.split())
        assert 1 <= symbols <= 2
        assert len(tiny_corpus.audio(utt)) == 1920 * symbols


def test_noisy_split_has_clean_reference(tiny_corpus):
    (noisy,) = tiny_corpus.split("test-noisy")
    assert 0.0 <= noisy.snr_db <= 15.0
    assert noisy.clean_path == f"clean/{noisy.id}.wav"
    assert len(tiny_corpus.clean_audio(noisy)) == len(tiny_corpus.audio(noisy))
    (clean,) = tiny_corpus.split("test-clean")
    assert clean.snr_db is None and clean.clean_path == clean.audio_path


def test_noisy_files_hold_the_recorded_snr(tmp_path):
    manifest = synth_corpus(30, 3, 5, tmp_path, length_range=(1, 3), noise_seconds=1.0)
    noisy = manifest.split("test-noisy")
    assert len(noisy) == 3
    for utt in noisy:
        audio = manifest.audio(utt).samples
        reference = manifest.clean_audio(utt).samples
        assert abs(measured_snr(reference, audio - reference) - utt.snr_db) < 0.05, utt.id


def test_splits_are_disjoint(tiny_corpus):
    ids = [u.id for u in tiny_corpus.entries]
    assert len(set(ids)) == len(ids)
    for split in corpus.SPLITS:
        assert all(u.id.startswith(f"{split}-") for u in tiny_corpus.split(split))
    assert sum(len(tiny_corpus.split(s)) for s in corpus.SPLITS) == len(ids)

    draws = [tuple(corpus._utterance_seed(0, s, 0).random(4)) for s in range(len(corpus.SPLITS))]
    assert len(set(draws)) == len(corpus.SPLITS)


def test_noise_files_are_split_by_use(tiny_corpus):
    assert len(tiny_corpus.noise_waveforms("train")) == 3
    assert len(tiny_corpus.noise_waveforms("heldout")) == 3
    assert set(tiny_corpus.noise) == {f"{p}_{k}" for p in ("train", "heldout") for k in corpus.NOISE_KINDS}


def test_generation_is_deterministic(tiny_corpus, tmp_path):
    again = synth_corpus(8, 2, 0, tmp_path, length_range=(1, 2), noise_seconds=1.0)
    assert [(u.id, u.transcript) for u in again.entries] == [(u.id, u.transcript) for u in tiny_corpus.entries]
    for a, b in zip(again.entries, tiny_corpus.entries):
        np.testing.assert_array_equal(again.audio(a).samples, tiny_corpus.audio(b).samples)


def test_manifest_round_trip(tiny_corpus):
    loaded = load_manifest(tiny_corpus.root)
    assert loaded.entries == tiny_corpus.entries
    assert loaded.vocabulary.labels == ["a", "b"]
    assert loaded.seed == 0
    assert loaded.noise == tiny_corpus.noise


@pytest.mark.parametrize("kind", corpus.NOISE_KINDS)
def test_noise_has_unit_rms(kind):
    noise = synth_noise(kind, 0.5, seed=3)
    assert np.sqrt(np.mean(noise.samples ** 2)) == pytest.approx(1.0)
    assert len(noise) == 8000


def test_tonal_noise_peaks_at_partials():
    noise = synth_noise("tonal", 1.0, seed=0, partials=[500, 1500])
    spectrum = np.abs(np.fft.rfft(noise.samples))
    peaks = sorted(np.argsort(spectrum)[-2:])
    assert peaks == [500, 1500]
    assert noise.meta["partials"] == [500, 1500]


def test_noise_seeds_are_decorrelated():
    a = synth_noise("white", 1.0, seed=1).samples
    b = synth_noise("white", 1.0, seed=2).samples
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_syllables_use_distinct_tone_pairs():
    pairs = {corpus.symbol_tones(k) for k in range(corpus.MAX_VOCAB)}
    assert len(pairs) == corpus.MAX_VOCAB
    assert len(corpus.syllable(0)) == 1920


def test_invalid_generation_arguments(tmp_path):
    with pytest.raises(ConfigError):
        synth_corpus(8, 17, 0, tmp_path)
    with pytest.raises(ConfigError):
        synth_noise("pink", 1.0, seed=0)


def _write_manifest(root, rows, columns=MANIFEST_COLUMNS):
    root.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(root / "manifest.tsv", sep="\t", index=False)
    return root / "manifest.tsv"


def test_manifest_errors(tiny_corpus, tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nowhere")

    path = _write_manifest(tmp_path / "columns", [["u1", "audio/u1.wav", "a"]], ["id", "path", "transcript"])
    with pytest.raises(DataError):
        load_manifest(path)

    path = _write_manifest(tmp_path / "split", [["u1", "audio/u1.wav", "a", "dev", "-"]])
    with pytest.raises(DataError):
        load_manifest(path, check_audio=False)

    row = ["u1", "audio/u1.wav", "a", "train", "-"]
    path = _write_manifest(tmp_path / "dupes", [row, row])
    with pytest.raises(DataError):
        load_manifest(path, check_audio=False)

    path = _write_manifest(tmp_path / "snr", [["u1", "audio/u1.wav", "a", "test-noisy", "loud"]])
    with pytest.raises(DataError):
        load_manifest(path, check_audio=False)

    path = _write_manifest(tmp_path / "audio", [row])
    assert load_manifest(path, check_audio=False).vocabulary.labels == ["a"]
    with pytest.raises(DataError):
        load_manifest(path)
