"""
Synthetic tone-syllable corpus, noise generators and the manifest format.

Every vocabulary symbol is a fixed 120 ms "syllable" made of two simultaneous
sinusoids; an utterance concatenates the syllables of its transcript with a
per-syllable amplitude jitter. Directory layout written by ``synth_corpus``::

    <out_dir>/
        manifest.tsv          id, path, transcript, split, snr_db ("-" when clean)
        corpus.yaml           seed, split sizes, noise files
        vocab.txt             one symbol per line (blank is implicit)
        audio/<id>.wav        utterance audio (noisy for test-noisy)
        clean/<id>.wav        clean reference of every test-noisy utterance
        noise/train_<kind>.wav, noise/heldout_<kind>.wav
"""

import logging
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.signal import butter, sosfiltfilt

from models.rnnt import Vocabulary
from utils.dsp import SAMPLE_RATE, Waveform, mix_at_snr, read_wav, write_wav
from utils.error_handler import ConfigError, DataError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test-clean", "test-noisy")
SYLLABLE_SECONDS = 0.12
FADE_SECONDS = 0.01
MAX_VOCAB = 16
NOISE_KINDS = ("white", "babble", "tonal")
NOISY_TEST_SNR = (0.0, 15.0)
MANIFEST_COLUMNS = ["id", "path", "transcript", "split", "snr_db"]

# two partials per symbol: low row x high column
LOW_TONES = (310, 440, 570, 700)
HIGH_TONES = (1250, 1610, 1970, 2330)


@dataclass
class Utterance:
    id: str
    audio_path: str
    transcript: str
    split: str
    snr_db: Optional[float] = None

    @property
    def clean_path(self) -> str:
        """Clean reference: a separate file for test-noisy, the audio itself otherwise."""
        return f"clean/{self.id}.wav" if self.split == "test-noisy" else self.audio_path


@dataclass
class CorpusManifest:
    entries: List[Utterance]
    vocabulary: Vocabulary
    seed: int = 0
    root: Path = field(default_factory=Path)
    noise: Dict[str, str] = field(default_factory=dict)

    def split(self, name: str) -> List[Utterance]:
        return [u for u in self.entries if u.split == name]

    def audio(self, utt: Utterance) -> Waveform:
        return read_wav(self.root / utt.audio_path)

    def clean_audio(self, utt: Utterance) -> Waveform:
        return read_wav(self.root / utt.clean_path)

    def noise_waveforms(self, prefix: str = "train") -> List[Waveform]:
        return [read_wav(self.root / path) for name, path in sorted(self.noise.items()) if name.startswith(prefix)]


# ---------------------------------------------------------------------------
# audio units

def symbol_tones(index: int) -> Tuple[int, int]:
    """(low, high) partials in Hz of the symbol at vocabulary position ``index`` (0-based)."""
    if not 0 <= index < MAX_VOCAB:
        raise ConfigError(f"symbol index {index} outside 0..{MAX_VOCAB - 1}")
    return LOW_TONES[index % 4], HIGH_TONES[index // 4]


def _fade_envelope(length: int) -> np.ndarray:
    fade = int(round(FADE_SECONDS * SAMPLE_RATE))
    env = np.ones(length)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    env[:fade] = ramp
    env[length - fade:] = ramp[::-1]
    return env


def syllable(index: int) -> np.ndarray:
    length = int(round(SYLLABLE_SECONDS * SAMPLE_RATE))
    t = np.arange(length) / SAMPLE_RATE
    low, high = symbol_tones(index)
    tone = 0.5 * (np.sin(2 * np.pi * low * t) + np.sin(2 * np.pi * high * t))
    return tone * _fade_envelope(length)


def render_transcript(ids: Sequence[int], rng: np.random.Generator, jitter: Tuple[float, float] = (0.5, 0.9)) -> Waveform:
    """Concatenate syllables of vocabulary ids (1-based, blank excluded) with random amplitudes."""
    units = [syllable(k - 1) * rng.uniform(*jitter) for k in ids]
    return Waveform(np.concatenate(units))


# ---------------------------------------------------------------------------
# noise

def _unit_rms(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x ** 2))


def synth_noise(kind: str, seconds: float, seed: int, partials: Optional[Sequence[int]] = None) -> Waveform:
    """Deterministic unit-RMS noise; ``meta['partials']`` lists the tonal frequencies."""
    rng = np.random.default_rng(seed)
    length = int(round(seconds * SAMPLE_RATE))
    if length < 2:
        raise DataError(f"noise of {seconds} s is too short")
    t = np.arange(length) / SAMPLE_RATE
    meta: Dict[str, object] = {"kind": kind, "seed": seed}
    if kind == "white":
        x = rng.standard_normal(length)
    elif kind == "babble":
        sos = butter(4, [150.0, 3800.0], btype="bandpass", fs=SAMPLE_RATE, output="sos")
        x = np.zeros(length)
        for _ in range(6):
            voice = sosfiltfilt(sos, rng.standard_normal(length))
            rate = rng.uniform(2.0, 6.0)
            envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
            x += voice * envelope
    elif kind == "tonal":
        if partials is None:
            partials = sorted(int(f) for f in rng.choice(np.arange(100, 4000, 25), size=3, replace=False))
        x = np.zeros(length)
        for f in partials:
            x += np.sin(2 * np.pi * int(f) * t + rng.uniform(0, 2 * np.pi))
        meta["partials"] = [int(f) for f in partials]
    else:
        raise ConfigError(f"unknown noise kind '{kind}' (choose from {NOISE_KINDS})")
    return Waveform(_unit_rms(x), meta=meta)


# ---------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class SplitSizes:
    train: int
    valid: int
    test_clean: int
    test_noisy: int

    @classmethod
    def for_total(cls, n_utts: int) -> "SplitSizes":
        if n_utts < 4:
            raise ConfigError(f"a corpus needs at least 4 utterances, got {n_utts}")
        held = max(1, n_utts // 10)
        return cls(n_utts - 3 * held, held, held, held)

    def as_dict(self) -> Dict[str, int]:
        return {"train": self.train, "valid": self.valid, "test-clean": self.test_clean, "test-noisy": self.test_noisy}


def _utterance_seed(seed: int, split_index: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split_index, index]))


def _make_utterance(job) -> Tuple[Utterance, Waveform, Optional[Waveform]]:
    seed, split_index, split, index, vocab_size, length_range, heldout = job
    rng = _utterance_seed(seed, split_index, index)
    n_symbols = int(rng.integers(length_range[0], length_range[1] + 1))
    ids = [int(k) for k in rng.integers(1, vocab_size + 1, size=n_symbols)]
    clean = render_transcript(ids, rng)
    utt_id = f"{split}-{index:05d}"
    labels = list(string.ascii_lowercase[:vocab_size])
    transcript = " ".join(labels[k - 1] for k in ids)
    if split != "test-noisy":
        return Utterance(utt_id, f"audio/{utt_id}.wav", transcript, split), clean, None
    noise = heldout[int(rng.integers(len(heldout)))]
    offset = int(rng.integers(0, max(1, len(noise) - len(clean))))
    segment = Waveform(np.roll(noise.samples, -offset))
    snr = float(rng.uniform(*NOISY_TEST_SNR))
    noisy = mix_at_snr(clean, segment, snr)
    reference = Waveform(clean.samples * noisy.meta["rescale"])
    return Utterance(utt_id, f"audio/{utt_id}.wav", transcript, split, snr), noisy, reference


def synth_corpus(n_utts: int, vocab_size: int, seed: int, out_dir: Union[str, Path],
                 length_range: Tuple[int, int] = (3, 8), noise_seconds: float = 10.0,
                 sizes: Optional[SplitSizes] = None, workers: int = 1) -> CorpusManifest:
    """Generate audio, noise files, vocabulary and manifest under ``out_dir``."""
    if not 1 <= vocab_size <= MAX_VOCAB:
        raise ConfigError(f"vocab_size must be in 1..{MAX_VOCAB}, got {vocab_size}")
    if not 1 <= length_range[0] <= length_range[1]:
        raise ConfigError(f"invalid transcript length range {length_range}")
    out_dir = Path(out_dir)
    sizes = sizes or SplitSizes.for_total(n_utts)
    vocabulary = Vocabulary(list(string.ascii_lowercase[:vocab_size]))

    noise_files: Dict[str, str] = {}
    heldout: List[Waveform] = []
    for k, kind in enumerate(NOISE_KINDS):
        train_noise = synth_noise(kind, noise_seconds, seed=seed * 1000 + 2 * k + 1)
        test_noise = synth_noise(kind, noise_seconds, seed=seed * 1000 + 2 * k + 2)
        for prefix, wave in (("train", train_noise), ("heldout", test_noise)):
            rel = f"noise/{prefix}_{kind}.wav"
            # keep headroom so 16-bit storage does not clip
            write_wav(out_dir / rel, Waveform(wave.samples / (np.max(np.abs(wave.samples)) * 1.01)))
            noise_files[f"{prefix}_{kind}"] = rel
        heldout.append(read_wav(out_dir / noise_files[f"heldout_{kind}"]))

    jobs = []
    for split_index, (split, count) in enumerate(sizes.as_dict().items()):
        jobs.extend((seed, split_index, split, i, vocab_size, length_range, heldout) for i in range(count))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_make_utterance, jobs))

    entries = []
    for utt, audio, reference in results:
        write_wav(out_dir / utt.audio_path, audio)
        if reference is not None:
            write_wav(out_dir / utt.clean_path, reference)
        entries.append(utt)

    manifest = CorpusManifest(entries, vocabulary, seed=seed, root=out_dir, noise=noise_files)
    save_manifest(manifest, out_dir / "manifest.tsv")
    logger.info("Synthesized %d utterances (%s) into %s", len(entries), sizes.as_dict(), out_dir)
    return manifest


# ---------------------------------------------------------------------------
# manifest I/O

def save_manifest(manifest: CorpusManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [[u.id, u.audio_path, u.transcript, u.split, "-" if u.snr_db is None else repr(float(u.snr_db))]
         for u in manifest.entries],
        columns=MANIFEST_COLUMNS,
    )
    frame.to_csv(path, sep="\t", index=False)
    manifest.vocabulary.save(path.parent / "vocab.txt")
    meta = {
        "seed": int(manifest.seed),
        "splits": {s: len(manifest.split(s)) for s in SPLITS},
        "noise": dict(manifest.noise),
    }
    with open(path.parent / "corpus.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(meta, f, sort_keys=True)
    return path


def load_manifest(path: Union[str, Path], check_audio: bool = True) -> CorpusManifest:
    """Read a manifest and its sibling vocab.txt/corpus.yaml; every referenced WAV must exist."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, on_bad_lines="error")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from exc
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise DataError(f"{path}: expected columns {MANIFEST_COLUMNS}, got {list(frame.columns)}")

    root = path.parent
    vocab_path = root / "vocab.txt"
    entries: List[Utterance] = []
    for line_no, row in enumerate(frame.itertuples(index=False), start=2):
        if not row.id or not row.path or row.split not in SPLITS:
            raise DataError(f"{path}:{line_no}: malformed record {tuple(row)}")
        try:
            snr = None if row.snr_db == "-" else float(row.snr_db)
        except ValueError:
            raise DataError(f"{path}:{line_no}: bad snr_db '{row.snr_db}'") from None
        entries.append(Utterance(row.id, row.path, row.transcript, row.split, snr))

    ids = [u.id for u in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate utterance ids")

    if vocab_path.exists():
        vocabulary = Vocabulary.load(vocab_path)
    else:
        vocabulary = Vocabulary(sorted({s for u in entries for s in u.transcript.split()}))
    for u in entries:
        vocabulary.encode(u.transcript)

    meta = {}
    meta_path = root / "corpus.yaml"
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = yaml.safe_load(f) or {}

    if check_audio:
        for u in entries:
            for rel in {u.audio_path, u.clean_path}:
                if not (root / rel).exists():
                    raise DataError(f"{path}: audio file missing for {u.id}: {root / rel}")

    return CorpusManifest(entries, vocabulary, seed=int(meta.get("seed", 0)), root=root,
                          noise=dict(meta.get("noise", {})))
