"""
Run configuration: YAML presets, a run file on top, then dotted overrides.

Resolution order (later wins)::

    config/presets/<preset>.yaml  ->  run config file  ->  --set section.key=value

The merged mapping is validated by pydantic models that reject unknown keys.
"""

import os
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.consistency import KL_PAIR_MODES
from models.dcrn import DcrnConfig, dcrn_preset
from models.rnnt import RnntConfig, rnnt_preset
from models.selection import SelectionConfig, selection_preset
from utils.augment import AugmentPolicy, SpecAugmentConfig
from utils.error_handler import ConfigError
from utils.schedule import ConstantSchedule, TriStageSchedule

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent.parent / "config" / "presets"
DEFAULT_RUN_CONFIG = Path(__file__).parent.parent / "config" / "run_config.yaml"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusSection(Section):
    path: str = "data/toy"
    n_utts: int = Field(200, ge=4)
    vocab_size: int = Field(8, ge=1, le=16)
    seed: int = 0
    length_min: int = Field(3, ge=1)
    length_max: int = Field(8, ge=1)
    noise_seconds: float = Field(10.0, gt=0)


class DcrnSection(Section):
    preset: str = "toy"
    blstm_state: Optional[int] = None
    dense_depth: Optional[int] = None
    dense_blocks: Optional[int] = None
    loss: Optional[str] = None


class RnntSection(Section):
    preset: str = "toy"
    encoder_layers: Optional[int] = None
    encoder_hidden: Optional[int] = None
    decoder_layers: Optional[int] = None
    decoder_hidden: Optional[int] = None
    joint_hidden: Optional[int] = None
    max_symbols_per_frame: int = Field(4, ge=1)


class SelectionSection(Section):
    preset: str = "toy"


class ScheduleSection(Section):
    warmup_epochs: int = Field(2, ge=0)
    peak_lr: float = Field(4e-4, gt=0)
    min_lr: float = Field(4e-6, gt=0)
    fine_tune_lr: float = Field(4e-6, gt=0)


class EpochsSection(Section):
    enhancer: int = Field(10, ge=1)
    asr: int = Field(20, ge=1)
    step2: int = Field(10, ge=1)
    step3: int = Field(5, ge=1)
    selection_phase1: int = Field(3, ge=1)
    selection_phase2: int = Field(3, ge=1)


class SpecAugmentSection(Section):
    freq_masks: int = Field(2, ge=0)
    freq_width_max: int = Field(15, ge=0)
    time_masks: int = Field(2, ge=0)
    time_width_max: int = Field(20, ge=0)
    mask_value: float = 0.0


class AugmentSection(Section):
    noise_prob: float = Field(0.5, ge=0, le=1)
    noise_snr_range: Tuple[float, float] = (0.0, 25.0)
    enhance_prob: float = Field(0.5, ge=0, le=1)
    enh_train_snr_range: Tuple[float, float] = (-5.0, 5.0)
    spec_augment: SpecAugmentSection = SpecAugmentSection()


class TrainingSection(Section):
    batch_size: int = Field(8, ge=1)
    clip_norm: float = Field(5.0, gt=0)
    lambda_aux: float = Field(0.5, ge=0)
    kl_pairs: str = "uniform13_24"
    combined_kl_pairs: str = "s3s4"
    use_selection: bool = False
    train_on_enhanced: bool = False
    threads: int = Field(1, ge=1)
    max_batches: Optional[int] = Field(None, ge=1)

    @field_validator("kl_pairs", "combined_kl_pairs")
    @classmethod
    def _known_pairs(cls, value: str) -> str:
        if value not in KL_PAIR_MODES:
            raise ValueError(f"must be one of {KL_PAIR_MODES}")
        return value


class RunConfig(Section):
    name: str = "run"
    preset: str = "toy"
    seed: int = 0
    runs_dir: str = Field(default_factory=lambda: os.getenv("SERNNT_RUNS_DIR", "runs"))
    corpus: CorpusSection = CorpusSection()
    dcrn: DcrnSection = DcrnSection()
    rnnt: RnntSection = RnntSection()
    selection: SelectionSection = SelectionSection()
    schedule: ScheduleSection = ScheduleSection()
    epochs: EpochsSection = EpochsSection()
    augment: AugmentSection = AugmentSection()
    training: TrainingSection = TrainingSection()

    # -- builders ----------------------------------------------------------
    def dcrn_config(self) -> DcrnConfig:
        base = dcrn_preset(self.dcrn.preset)
        changes = {k: v for k, v in self.dcrn.model_dump(exclude={"preset"}).items() if v is not None}
        return replace(base, **changes) if changes else base

    def rnnt_config(self, vocab_size: Optional[int] = None) -> RnntConfig:
        base = rnnt_preset(self.rnnt.preset)
        changes = {k: v for k, v in self.rnnt.model_dump(exclude={"preset", "max_symbols_per_frame"}).items()
                   if v is not None}
        if vocab_size is not None:
            changes["vocab_size"] = vocab_size
        return replace(base, **changes) if changes else base

    def selection_config(self) -> SelectionConfig:
        return selection_preset(self.selection.preset)

    def tri_stage(self, total_epochs: int) -> TriStageSchedule:
        s = self.schedule
        return TriStageSchedule(total_epochs=total_epochs, warmup_epochs=s.warmup_epochs,
                                peak_lr=s.peak_lr, min_lr=s.min_lr)

    def fine_tune(self, total_epochs: int) -> ConstantSchedule:
        return ConstantSchedule(total_epochs=total_epochs, lr=self.schedule.fine_tune_lr)

    def augment_policy(self) -> AugmentPolicy:
        a = self.augment
        return AugmentPolicy(a.noise_prob, tuple(a.noise_snr_range), a.enhance_prob, tuple(a.enh_train_snr_range))

    def spec_augment_config(self) -> SpecAugmentConfig:
        return SpecAugmentConfig(**self.augment.spec_augment.model_dump())

    @property
    def run_dir(self) -> Path:
        return Path(self.runs_dir) / self.name


# ---------------------------------------------------------------------------
# loading

def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def available_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_preset(name: str) -> Dict[str, Any]:
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"unknown preset '{name}' (available: {available_presets()})")
    return _read_yaml(path)


def parse_override(item: str) -> Tuple[List[str], Any]:
    """'training.batch_size=4' -> (['training', 'batch_size'], 4); values are parsed as YAML scalars."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form section.key=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{item}' has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return parts, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    data = dict(data)
    for item in overrides:
        parts, value = parse_override(item)
        nested: Any = value
        for part in reversed(parts):
            nested = {part: nested}
        data = deep_merge(data, nested)
    return data


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = (),
                    preset: Optional[str] = None) -> RunConfig:
    """Resolve preset, run file and overrides into a validated ``RunConfig``."""
    run_data = _read_yaml(Path(path)) if path else {}
    override_data = apply_overrides({}, overrides)
    preset_name = preset or override_data.get("preset") or run_data.get("preset") or "toy"
    merged = deep_merge(load_preset(preset_name), run_data)
    merged = deep_merge(merged, override_data)
    merged["preset"] = preset_name
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigError(f"invalid configuration at '{location}': {first.get('msg')}") from exc
    logger.debug("Resolved run config '%s' from preset '%s'", config.name, preset_name)
    return config


def dump_run_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
    return path
