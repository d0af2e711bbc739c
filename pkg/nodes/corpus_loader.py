"""
First node of every training workflow: make sure the corpus exists, then
load the training and validation audio into the state.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from nodes.base_node import BaseNode
from nodes.training_loop import load_examples
from utils.corpus import CorpusManifest, load_manifest, synth_corpus
from utils.error_handler import DataError
from utils.run_config import RunConfig

logger = logging.getLogger(__name__)


def prepare_corpus(config: RunConfig, threads: int = 1) -> CorpusManifest:
    """Load the configured manifest, synthesizing the corpus first when the directory has none."""
    c = config.corpus
    path = Path(c.path)
    if (path / "manifest.tsv").exists():
        return load_manifest(path)
    logger.info("No manifest under %s; synthesizing %d utterances", path, c.n_utts)
    return synth_corpus(c.n_utts, c.vocab_size, c.seed, path, length_range=(c.length_min, c.length_max),
                        noise_seconds=c.noise_seconds, workers=threads)


class CorpusLoaderNode(BaseNode):

    def __init__(self):
        super().__init__("corpus_loader")

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        config = state["config"]
        manifest = state.get("manifest") or prepare_corpus(config, state["settings"].threads)
        train = load_examples(manifest, "train")
        valid = load_examples(manifest, "valid")
        if not train:
            raise DataError(f"corpus at {manifest.root} has no training utterances")
        if not manifest.noise_waveforms("train"):
            raise DataError(f"corpus at {manifest.root} has no training noise recordings")
        self.report_progress(f"{len(train)} training / {len(valid)} validation utterances, "
                             f"{manifest.vocabulary.size - 1} symbols")
        return {"manifest": manifest, "train_examples": train, "valid_examples": valid}
