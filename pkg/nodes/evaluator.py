"""
Test-set evaluation: decode every utterance of the test splits, score WER
against the transcript and SI-SNR of the recognizer's front-end output
against the clean reference.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import pandas as pd

from models.recognizer import Recognizer
from nodes.base_node import BaseNode, assemble_batch
from utils.corpus import CorpusManifest, Utterance
from utils.error_handler import ConfigError, DataError
from utils.feature_flags import is_feature_enabled
from utils.metrics import UTTERANCE_COLUMNS, si_snr, summarize_utterances, wer
from utils.state_logger import RunLogger

logger = logging.getLogger(__name__)

TEST_SPLITS = ("test-clean", "test-noisy")


def dump_mask(recognizer: Recognizer, utt: Utterance, audio, out_dir: Path) -> Optional[Path]:
    """Write p(t, f) (selection) or the enhancer gain (frames x bins) of one utterance as CSV."""
    if recognizer.selection is not None:
        values, folder = recognizer.mask(audio).values, "masks"
    elif recognizer.dcrn is not None:
        values, folder = recognizer.gain(audio), "gains"
    else:
        return None
    path = out_dir / folder / f"{utt.id}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(values).to_csv(path, index_label="frame")
    return path


def score_utterance(recognizer: Recognizer, manifest: CorpusManifest, utt: Utterance) -> Dict[str, Any]:
    audio = manifest.audio(utt)
    hypothesis = recognizer.transcribe(audio)
    estimate = recognizer.enhanced_waveform(audio)
    return {
        "id": utt.id,
        "split": utt.split,
        "wer": round(wer(utt.transcript, hypothesis).percent, 4),
        "si_snr": round(si_snr(estimate, manifest.clean_audio(utt)), 4),
        "reference": utt.transcript,
        "hypothesis": hypothesis,
    }


def evaluate(recognizer: Recognizer, manifest: CorpusManifest, splits: Sequence[str] = TEST_SPLITS,
             out_dir: Optional[Path] = None, threads: int = 1,
             run_logger: Optional[RunLogger] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Score the recognizer on the given splits.

    Returns:
        (per-utterance frame, summary frame with one row per split)
    """
    utterances = [u for split in splits for u in manifest.split(split)]
    if not utterances:
        raise DataError(f"no utterances in splits {list(splits)}")
    rows = assemble_batch(utterances, lambda u: score_utterance(recognizer, manifest, u), threads)
    per_utterance = pd.DataFrame(rows, columns=UTTERANCE_COLUMNS)
    summary = summarize_utterances(per_utterance)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        per_utterance.to_csv(out_dir / "utterances.csv", index=False)
        summary.to_csv(out_dir / "summary.csv", index=False)
        if is_feature_enabled('mask_dump'):
            for utt in utterances:
                dump_mask(recognizer, utt, manifest.audio(utt), out_dir)
    if run_logger:
        run_logger.write_table(f"evaluation_{recognizer.mode}", per_utterance)
        run_logger.write_table(f"summary_{recognizer.mode}", summary)
    for row in summary.itertuples(index=False):
        logger.info("%s [%s]: WER %.2f%%, SI-SNR %.2f dB over %d utterances",
                    row.split, recognizer.mode, row.wer, row.si_snr, row.utterances)
    return per_utterance, summary


class EvaluatorNode(BaseNode):
    """
    Evaluate the workflow's final models on the test splits.

    Args:
        rnnt_key: State key of the transducer
        dcrn_key: State key of the enhancer (None for no front end)
        selection_key: State key of the selection module
        label: Sub-directory of the run directory receiving the CSVs
    """

    def __init__(self, rnnt_key: str, dcrn_key: Optional[str] = None, selection_key: Optional[str] = None,
                 label: str = "evaluation"):
        super().__init__(f"evaluator[{label}]")
        self.rnnt_key = rnnt_key
        self.dcrn_key = dcrn_key
        self.selection_key = selection_key
        self.label = label

    def validate_inputs(self, state: Dict[str, Any]):
        for key in (self.rnnt_key, self.dcrn_key, self.selection_key):
            if key and state.get(key) is None:
                raise ConfigError(f"evaluation needs '{key}' in the workflow state")

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        settings = state["settings"]
        recognizer = Recognizer(
            state[self.rnnt_key],
            state["manifest"].vocabulary,
            dcrn=state[self.dcrn_key] if self.dcrn_key else None,
            selection=state[self.selection_key] if self.selection_key else None,
            max_symbols_per_frame=settings.max_symbols_per_frame,
        )
        out_dir = Path(state["config"].run_dir) / self.label
        _, summary = evaluate(recognizer, state["manifest"], out_dir=out_dir, threads=settings.threads,
                              run_logger=settings.run_logger)
        for row in summary.itertuples(index=False):
            self.report_progress(f"{row.split}: WER {row.wer:.2f}%")
        evaluations = dict(state.get("evaluations") or {})
        evaluations[self.label] = summary.to_dict(orient="records")
        return {"evaluations": evaluations}
