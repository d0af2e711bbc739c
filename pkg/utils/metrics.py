"""
Evaluation metrics: SI-SNR, word error rate and averaged relative WER reduction.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from models.dcrn import enhance
from utils.dsp import Waveform, mix_at_snr
from utils.error_handler import DataError, ShapeError

logger = logging.getLogger(__name__)

SI_SNR_CAP_DB = 60.0
SUMMARY_COLUMNS = ["split", "utterances", "wer", "si_snr"]
UTTERANCE_COLUMNS = ["id", "split", "wer", "si_snr", "reference", "hypothesis"]

Signal = Union[Waveform, np.ndarray]


def _samples(x: Signal) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64).reshape(-1)


def si_snr(est: Signal, ref: Signal) -> float:
    """Scale-invariant SNR in dB after mean removal, capped at +60 dB."""
    e, r = _samples(est), _samples(ref)
    if e.shape != r.shape:
        raise ShapeError(f"si_snr: lengths {e.shape[0]} and {r.shape[0]} differ")
    e = e - e.mean()
    r = r - r.mean()
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise DataError("si_snr: reference signal is zero")
    target = (np.dot(e, r) / ref_energy) * r
    residual = e - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy <= target_energy * 10.0 ** (-SI_SNR_CAP_DB / 10.0):
        return SI_SNR_CAP_DB
    if target_energy == 0.0:
        return -SI_SNR_CAP_DB
    return float(10.0 * np.log10(target_energy / residual_energy))


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.edits / self.ref_words

    @property
    def percent(self) -> float:
        return 100.0 * self.wer

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(self.substitutions + other.substitutions, self.deletions + other.deletions,
                            self.insertions + other.insertions, self.ref_words + other.ref_words)


def _words(x: Union[str, Sequence[str]]) -> List[str]:
    return x.split() if isinstance(x, str) else list(x)


def wer(ref: Union[str, Sequence[str]], hyp: Union[str, Sequence[str]]) -> WerBreakdown:
    """Unit-cost Levenshtein alignment; ties prefer a substitution over a deletion/insertion pair."""
    r, h = _words(ref), _words(hyp)
    if not r:
        raise DataError("wer: reference is empty")
    n, m = len(r), len(h)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (r[i - 1] != h[j - 1])
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (r[i - 1] != h[j - 1]):
            subs += int(r[i - 1] != h[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(subs, dels, ins, n)


def corpus_wer(pairs: Iterable[Tuple[str, str]]) -> WerBreakdown:
    total: Optional[WerBreakdown] = None
    for ref, hyp in pairs:
        b = wer(ref, hyp)
        total = b if total is None else total + b
    if total is None:
        raise DataError("corpus_wer: no utterances")
    return total


@dataclass
class WerrReport:
    clean_base: float
    noisy_base: float
    clean_new: float
    noisy_new: float
    werr_clean: float
    werr_noisy: float
    werr_avg: float


def _relative_reduction(base: float, new: float, name: str) -> float:
    if base <= 0:
        raise DataError(f"werr: {name} baseline WER must be positive, got {base}")
    return (base - new) / base * 100.0


def werr(clean_base: float, noisy_base: float, clean_new: float, noisy_new: float) -> WerrReport:
    """Relative WER reduction on each test split and their unweighted average (percent)."""
    werr_clean = _relative_reduction(clean_base, clean_new, "clean")
    werr_noisy = _relative_reduction(noisy_base, noisy_new, "noisy")
    return WerrReport(clean_base, noisy_base, clean_new, noisy_new,
                      werr_clean, werr_noisy, (werr_clean + werr_noisy) / 2.0)


def read_summary(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"summary file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in ("split", "wer") if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: summary lacks columns {missing}")
    return frame.set_index("split")


def werr_from_summaries(base_path: Union[str, Path], new_path: Union[str, Path],
                        clean_split: str = "test-clean", noisy_split: str = "test-noisy") -> WerrReport:
    base, new = read_summary(base_path), read_summary(new_path)
    values = []
    for frame, path in ((base, base_path), (new, new_path)):
        for split in (clean_split, noisy_split):
            if split not in frame.index:
                raise DataError(f"{path}: no '{split}' row")
            values.append(float(frame.loc[split, "wer"]))
    return werr(values[0], values[1], values[2], values[3])


def werr_table(report: WerrReport) -> pd.DataFrame:
    return pd.DataFrame([asdict(report)])


def summarize_utterances(rows: pd.DataFrame) -> pd.DataFrame:
    """One summary row per split: utterance count, corpus WER (%) and mean SI-SNR."""
    records = []
    for split, group in rows.groupby("split", sort=False):
        total = corpus_wer(zip(group["reference"], group["hypothesis"]))
        snr = group["si_snr"].dropna()
        records.append({
            "split": split,
            "utterances": len(group),
            "wer": round(total.percent, 4),
            "si_snr": round(float(snr.mean()), 4) if len(snr) else float("nan"),
        })
    return pd.DataFrame(records, columns=SUMMARY_COLUMNS)


def evaluate_enhancer(model, clean: Sequence[Waveform], noise: Waveform,
                      snrs: Sequence[float] = (-5.0, 0.0, 5.0)) -> pd.DataFrame:
    """Mean input and output SI-SNR of ``enhance`` on clean utterances mixed at each SNR."""
    if not clean:
        raise DataError("evaluate_enhancer: no clean utterances")
    rows = []
    for snr in snrs:
        before, after = [], []
        for s in clean:
            noisy = mix_at_snr(s, noise, snr)
            reference = s.samples * noisy.meta["rescale"]
            before.append(si_snr(noisy, reference))
            after.append(si_snr(enhance(model, noisy), reference))
        rows.append({
            "snr_db": float(snr),
            "input_si_snr": float(np.mean(before)),
            "output_si_snr": float(np.mean(after)),
            "improvement": float(np.mean(after) - np.mean(before)),
        })
        logger.info("SNR %+.1f dB: SI-SNR %.2f -> %.2f dB", snr, rows[-1]["input_si_snr"], rows[-1]["output_si_snr"])
    return pd.DataFrame(rows)
