"""
Training critics: checks run after each training phase.

A critic inspects a phase result and returns a ValidationResult. Failed
critical checks raise, so a violated freeze contract or a diverged loss stops
the workflow with the matching exit code.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping

from models.layers import Module
from utils.error_handler import FreezeViolationError, NumericalError, handle_node_errors
from utils.feature_flags import is_feature_enabled

logger = logging.getLogger(__name__)


class CriticSeverity(Enum):
    """Severity levels for critic findings"""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


@dataclass
class ValidationResult:
    """Result of a critic's validation"""
    is_valid: bool
    severity: CriticSeverity
    issues: List[str]
    metrics: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "is_valid": self.is_valid,
            "severity": self.severity.value,
            "issues": list(self.issues),
            "metrics": dict(self.metrics),
        }


class BaseCritic:
    """Base class for phase critics"""

    mandatory = False

    def __init__(self, name: str):
        self.name = name
        self.enabled = self._get_env_enabled()

    def _get_env_enabled(self) -> bool:
        """Check if critic is enabled via environment variable; mandatory critics always are."""
        if self.mandatory:
            return True
        env_var = f"{self.name.upper()}_CRITIC_ENABLED"
        return os.getenv(env_var, "true").lower() == "true"

    def validate(self, phase: Mapping[str, Any]) -> ValidationResult:
        raise NotImplementedError("Subclasses must implement validate()")

    def format_issues_message(self, issues: List[str]) -> str:
        if not issues:
            return "No issues found"
        return "\n".join(f"• {issue}" for issue in issues)


def snapshot(modules: Mapping[str, Module]) -> Dict[str, str]:
    """Parameter checksums of each named module."""
    return {name: module.checksum() for name, module in modules.items()}


class FreezeCritic(BaseCritic):
    """Frozen parameter groups must be bit-identical across a phase."""

    mandatory = True

    def __init__(self):
        super().__init__("freeze")

    def validate(self, phase: Mapping[str, Any]) -> ValidationResult:
        before = phase.get("frozen_before", {})
        after = phase.get("frozen_after", {})
        changed = sorted(name for name in before if after.get(name) != before[name])
        issues = [f"{phase.get('phase')}: frozen group '{name}' changed" for name in changed]
        return ValidationResult(
            is_valid=not issues,
            severity=CriticSeverity.CRITICAL if issues else CriticSeverity.INFO,
            issues=issues,
            metrics={"frozen_groups": sorted(before)},
        )

    def enforce(self, phase: Mapping[str, Any]) -> ValidationResult:
        result = self.validate(phase)
        if is_feature_enabled('freeze_audit'):
            for name, checksum in sorted(phase.get("frozen_after", {}).items()):
                logger.info("%s: frozen group '%s' checksum %s", phase.get("phase"), name, checksum)
        if not result.is_valid:
            raise FreezeViolationError(self.format_issues_message(result.issues))
        return result


class LossCritic(BaseCritic):
    """Per-epoch training and validation losses must stay finite."""

    def __init__(self):
        super().__init__("loss")

    def validate(self, phase: Mapping[str, Any]) -> ValidationResult:
        issues = []
        for row in phase.get("history", []):
            for key in ("train_loss", "val_loss"):
                value = row.get(key)
                if value is not None and not math.isfinite(value):
                    issues.append(f"{phase.get('phase')}: epoch {row.get('epoch')} {key} is {value}")
        return ValidationResult(
            is_valid=not issues,
            severity=CriticSeverity.CRITICAL if issues else CriticSeverity.INFO,
            issues=issues,
            metrics={"epochs": len(phase.get("history", []))},
        )

    def enforce(self, phase: Mapping[str, Any]) -> ValidationResult:
        result = self.validate(phase)
        if not result.is_valid:
            raise NumericalError(self.format_issues_message(result.issues))
        return result


def phase_critics() -> List[BaseCritic]:
    """The critics in effect for this process: the freeze check plus any enabled optional ones."""
    return [c for c in (FreezeCritic(), LossCritic()) if c.enabled]


@handle_node_errors("training_critic")
def training_critic_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """Validate every phase recorded so far; stores one result per phase."""
    critics = phase_critics()
    results = {}
    for phase in state.get("phase_results", []):
        for critic in critics:
            results[f"{phase['phase']}/{critic.name}"] = critic.enforce(phase).as_dict()
    print(f"🔍 Training critics checked {len(state.get('phase_results', []))} phase(s)")
    return {"critic_results": results}


def should_continue(state: Dict[str, Any]) -> str:
    """Conditional edge after the critic: stop when any check failed."""
    failed = [key for key, r in state.get("critic_results", {}).items() if not r["is_valid"]]
    return "stop" if failed else "continue"
