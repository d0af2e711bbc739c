"""
Transducer training under every augmentation configuration.

Options map onto the training rows we compare:

    baseline                  AsrOptions()
    + noise                   AsrOptions(augment_noise=True)
    + SE                      AsrOptions(augment_enhance=True)
    + noise + SE + KL         AsrOptions(augment_noise=True, augment_enhance=True, kl_pairs="uniform13_24")
    + noise + KL(s1, s2)      AsrOptions(augment_noise=True, kl_pairs="s1s2")
    on enhanced (step 2)      AsrOptions(train_on_enhanced=True, init_from=step1_model)

Without KL a batch gets noise with probability noise_prob and enhancement
with probability enhance_prob, one coin each per batch. With KL every
utterance is expanded into its four variants and one pair is drawn.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import tensor as T
from models.consistency import KL_PAIR_MODES, LossWeights, combined_loss, make_variants, sample_pair
from models.dcrn import EnhancementModel, enhance
from models.recognizer import Recognizer, asr_features
from models.rnnt import RnntModel, Vocabulary, build_rnnt, utterance_loss
from models.tensor import Tensor
from nodes.base_node import BaseNode, assemble_batch
from nodes.training_loop import Example, TrainerSettings, phase_records, phase_seed, run_phase
from utils.augment import AugmentPolicy, BatchPlan, draw_batch_plan, noise_segment, spec_augment_mask, worker_rng
from utils.dsp import Waveform, mix_at_snr
from utils.error_handler import ConfigError, DataError
from utils.metrics import corpus_wer
from utils.schedule import Schedule

logger = logging.getLogger(__name__)

# pairs whose variants all come from enhanced audio
ENHANCED_PAIR_MODES = ("none", "s3s4")


@dataclass
class AsrOptions:
    augment_noise: bool = False
    augment_enhance: bool = False
    kl_pairs: str = "none"
    init_from: Optional[RnntModel] = None
    train_on_enhanced: bool = False

    @property
    def uses_kl(self) -> bool:
        return self.kl_pairs != "none"

    @property
    def needs_enhancer(self) -> bool:
        return self.augment_enhance or self.train_on_enhanced or self.kl_pairs not in ("none", "s1s2")

    def check(self, dcrn: Optional[EnhancementModel]):
        if self.kl_pairs not in KL_PAIR_MODES:
            raise ConfigError(f"unknown kl_pairs '{self.kl_pairs}' (choose from {KL_PAIR_MODES})")
        if self.needs_enhancer and dcrn is None:
            raise ConfigError(f"options {self.describe()} need a trained enhancer")
        if self.train_on_enhanced and self.kl_pairs not in ENHANCED_PAIR_MODES:
            raise ConfigError(f"training on enhanced audio allows only KL pairs {ENHANCED_PAIR_MODES}, "
                              f"got '{self.kl_pairs}'")

    def describe(self) -> str:
        parts = [name for name, on in (("noise", self.augment_noise), ("SE", self.augment_enhance),
                                       ("enhanced", self.train_on_enhanced)) if on]
        if self.uses_kl:
            parts.append(f"KL({self.kl_pairs})")
        if self.init_from is not None:
            parts.append("init")
        return "+".join(parts) or "baseline"


@dataclass
class PreparedItem:
    features: List[np.ndarray]
    labels: List[int]
    pair_id: str = ""
    snr_db: Optional[float] = None
    noise: bool = False
    enhance: bool = False


def _identity(w: Waveform) -> Waveform:
    return w


def _masked(features: np.ndarray, settings: TrainerSettings, rng: np.random.Generator) -> np.ndarray:
    cfg = settings.masking()
    if cfg is None:
        return features
    return np.where(spec_augment_mask(features.shape, cfg, rng), features, cfg.mask_value)


def validation_scores(recognizer: Recognizer, examples: Sequence[Example]) -> Tuple[float, float]:
    """Mean transducer loss and corpus WER (%) of a recognizer on examples."""
    if not examples:
        raise DataError("validation split is empty")
    losses, pairs = [], []
    for ex in examples:
        losses.append(recognizer.loss(ex.audio, ex.transcript))
        pairs.append((ex.transcript, recognizer.transcribe(ex.audio)))
    return float(np.mean(losses)), corpus_wer(pairs).percent


def train_asr(rnnt: RnntModel, corpus: Sequence[Example], policy: AugmentPolicy, sched: Schedule,
              options: AsrOptions, settings: TrainerSettings, vocabulary: Vocabulary,
              noise_corpus: Sequence[Waveform] = (), dcrn: Optional[EnhancementModel] = None,
              valid: Optional[Sequence[Example]] = None, phase: str = "asr", step: int = 1,
              node: Optional[BaseNode] = None) -> RnntModel:
    """
    Train the transducer; the enhancer (if any) stays frozen.

    Raises:
        ConfigError: KL or enhancement options without an enhancer
        DataError: empty corpus, or noise requested without noise recordings
    """
    options.check(dcrn)
    if not corpus:
        raise DataError("train_asr: corpus is empty")
    if (options.augment_noise or options.uses_kl) and not noise_corpus:
        raise DataError("train_asr: noise augmentation requested but no noise recordings given")
    if options.needs_enhancer and not dcrn.trained:
        logger.warning("%s: enhancer has not been trained", phase)
    if options.init_from is not None and options.init_from is not rnnt:
        rnnt.load_state_dict(options.init_from.state_dict())
        logger.info("%s: initialized from a model trained by %s", phase, options.init_from.trained_by)

    root = phase_seed(settings.seed, step, phase)
    weights = LossWeights(settings.lambda_aux)
    pair_enhancer = dcrn if options.kl_pairs not in ("none", "s1s2") else _identity
    run_logger = settings.run_logger
    counter = {"step": 0}

    def build(job: Tuple[int, int, BatchPlan, int]) -> PreparedItem:
        epoch, index, plan, position = job
        ex = corpus[index]
        rng = worker_rng(root, epoch, index)
        s = ex.audio
        if options.uses_kl:
            snr = float(rng.uniform(*policy.noise_snr_range))
            variants = make_variants(s, noise_segment(noise_corpus, len(s), rng), snr, pair_enhancer)
            w_i, w_j, pair_id = sample_pair(variants, rng, options.kl_pairs)
            feats = [_masked(asr_features(w).values, settings, rng) for w in (w_i, w_j)]
            return PreparedItem(feats, ex.labels, pair_id=pair_id, snr_db=snr,
                                noise=any(v in pair_id for v in ("s2", "s4")),
                                enhance=any(v in pair_id for v in ("s3", "s4")))
        x = s
        if plan.noise:
            x = mix_at_snr(s, noise_segment(noise_corpus, len(s), rng), plan.snr_db[position])
        if plan.enhance:
            with T.no_grad():
                x = enhance(dcrn, x)
        return PreparedItem([_masked(asr_features(x).values, settings, rng)], ex.labels,
                            snr_db=plan.snr_db[position] if plan.noise else None,
                            noise=plan.noise, enhance=plan.enhance)

    def batch_loss(epoch: int, batch: int, indices: Sequence[int]) -> Tensor:
        plan = draw_batch_plan(policy, worker_rng(root, epoch, len(corpus) + batch), len(indices),
                               use_noise=options.augment_noise and not options.uses_kl,
                               use_enhance=options.augment_enhance and not options.uses_kl)
        if options.train_on_enhanced:
            plan.enhance = True
        items = assemble_batch([(epoch, i, plan, k) for k, i in enumerate(indices)], build, settings.threads)

        total = None
        for item in items:
            if options.uses_kl:
                terms = combined_loss(rnnt, (Tensor(item.features[0]), Tensor(item.features[1])),
                                      item.labels, weights)
                loss = terms.total
                counter["step"] += 1
                if run_logger:
                    run_logger.log_consistency(phase, counter["step"], item.pair_id, terms.as_row())
            else:
                loss = utterance_loss(rnnt, Tensor(item.features[0]), item.labels)
            total = loss if total is None else total + loss

        if options.uses_kl:
            plan = BatchPlan(noise=any(i.noise for i in items), enhance=any(i.enhance for i in items),
                             snr_db=[i.snr_db for i in items if i.snr_db is not None and i.noise],
                             pair_id=" ".join(i.pair_id for i in items))
        if run_logger:
            run_logger.log_augmentation(phase, epoch, batch, plan.as_row())
        return total / len(items)

    recognizer = Recognizer(rnnt, vocabulary, dcrn=dcrn if options.train_on_enhanced else None,
                            max_symbols_per_frame=settings.max_symbols_per_frame)
    held_out = list(valid) if valid else list(corpus)

    def validate() -> Tuple[float, Optional[float]]:
        return validation_scores(recognizer, held_out)

    frozen = {"dcrn": dcrn} if dcrn is not None else {}
    logger.info("%s: training RNN-T with %s", phase, options.describe())
    run_phase(phase, step, {"rnnt": rnnt}, frozen, sched, len(corpus), batch_loss, validate, settings, node)
    return rnnt


class AsrTrainerNode(BaseNode):
    """
    One transducer training phase of a workflow.

    Args:
        phase: Phase name (CSV and checkpoint prefix)
        step: Checkpoint step directory
        output_key: State key receiving the trained model
        epochs: Attribute of the run config's ``epochs`` section
        init_key: State key of the model to initialize from
        with_enhancer: Pass the state's DCRN to training
        kl_setting: Attribute of the ``training`` section naming the KL pairs
    """

    def __init__(self, phase: str, step: int, output_key: str, epochs: str = "asr",
                 init_key: Optional[str] = None, augment_noise: bool = False, augment_enhance: bool = False,
                 train_on_enhanced: bool = False, with_enhancer: bool = False, kl_setting: Optional[str] = None):
        super().__init__(f"asr_trainer[{phase}]")
        self.phase = phase
        self.step = step
        self.output_key = output_key
        self.epochs = epochs
        self.init_key = init_key
        self.augment_noise = augment_noise
        self.augment_enhance = augment_enhance
        self.train_on_enhanced = train_on_enhanced
        self.with_enhancer = with_enhancer
        self.kl_setting = kl_setting

    def validate_inputs(self, state: Dict[str, Any]):
        if self.init_key and state.get(self.init_key) is None:
            raise ConfigError(f"{self.phase}: no '{self.init_key}' model to initialize from")
        if self.with_enhancer and state.get("dcrn") is None:
            raise ConfigError(f"{self.phase}: needs a trained enhancer")

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        config = state["config"]
        vocabulary = state["manifest"].vocabulary
        options = AsrOptions(
            augment_noise=self.augment_noise,
            augment_enhance=self.augment_enhance,
            kl_pairs=getattr(config.training, self.kl_setting) if self.kl_setting else "none",
            init_from=state.get(self.init_key) if self.init_key else None,
            train_on_enhanced=self.train_on_enhanced,
        )
        rnnt = build_rnnt(config.rnnt_config(vocabulary.size), seed=config.seed)
        epochs = getattr(config.epochs, self.epochs)
        train_asr(rnnt, state["train_examples"], config.augment_policy(), config.tri_stage(epochs), options,
                  state["settings"], vocabulary, noise_corpus=state["manifest"].noise_waveforms("train"),
                  dcrn=state.get("dcrn") if self.with_enhancer else None, valid=state["valid_examples"],
                  phase=self.phase, step=self.step, node=self)
        return {self.output_key: rnnt, "phase_results": phase_records(state["settings"])}
