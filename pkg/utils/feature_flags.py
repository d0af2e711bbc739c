"""
Feature flags for optional training behaviour.

Flags live in config/feature_flags.yaml and can be overridden per process
with FEATURE_<NAME>=true/false. The states in effect are written to the run
log when a run starts.
"""

import os
import logging
from typing import Dict, Any, Optional
from pathlib import Path
from dataclasses import dataclass, field

import yaml

logger = logging.getLogger(__name__)

TRUTHY = ('true', '1', 'yes', 'on')

DEFAULT_FEATURES = {
    'spec_augment': {'enabled': True, 'description': 'Time and frequency masking of ASR features'},
    'mask_dump': {'enabled': False, 'description': 'Write selection masks and enhancement gains as CSV'},
    'parallel_batches': {'enabled': True, 'description': 'Assemble batches in worker threads'},
    'freeze_audit': {'enabled': True, 'description': 'Log the checksums of frozen parameter groups after each phase'},
}


@dataclass
class Feature:
    """A single feature flag"""
    name: str
    enabled: bool
    description: str = ''
    config: Dict[str, Any] = field(default_factory=dict)


class FeatureFlags:
    """Manages feature flags for the application"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if not self._initialized:
            self._features: Dict[str, Feature] = {}
            self._config: Dict[str, Any] = {}
            self.load_config()
            self._initialized = True

    def load_config(self, config_path: Optional[str] = None):
        """
        Load flags from YAML, falling back to the built-in defaults.

        Args:
            config_path: Path to configuration file
        """
        if not config_path:
            for path in (Path(__file__).parent.parent / "config" / "feature_flags.yaml",
                         Path.cwd() / "config" / "feature_flags.yaml"):
                if path.exists():
                    config_path = str(path)
                    break

        if config_path and Path(config_path).exists():
            with open(config_path, 'r') as f:
                self._config = yaml.safe_load(f) or {}
        else:
            self._config = {'features': DEFAULT_FEATURES}
        self._parse_features()

    def _parse_features(self):
        self._features = {}
        features_config = dict(DEFAULT_FEATURES)
        features_config.update(self._config.get('features', {}) or {})
        for name, config in features_config.items():
            self._features[name] = Feature(
                name=name,
                enabled=bool(config.get('enabled', False)),
                description=config.get('description', ''),
                config=config,
            )

    def is_enabled(self, feature_name: str) -> bool:
        """
        Check if a feature is enabled

        Args:
            feature_name: Name of the feature

        Returns:
            True if feature is enabled
        """
        env_value = os.getenv(f"FEATURE_{feature_name.upper()}")
        if env_value is not None:
            return env_value.lower() in TRUTHY

        feature = self._features.get(feature_name)
        return bool(feature and feature.enabled)

    def get_config(self, feature_name: str) -> Dict[str, Any]:
        feature = self._features.get(feature_name)
        return feature.config if feature else {}

    def get_all_features(self) -> Dict[str, bool]:
        return {name: self.is_enabled(name) for name in self._features}

    def enable_feature(self, feature_name: str):
        if feature_name in self._features:
            self._features[feature_name].enabled = True
        else:
            self._features[feature_name] = Feature(
                name=feature_name,
                enabled=True,
                description=f"Dynamically enabled feature: {feature_name}",
            )

    def disable_feature(self, feature_name: str):
        if feature_name in self._features:
            self._features[feature_name].enabled = False

    def log_feature_states(self) -> Dict[str, bool]:
        """Log every flag with its effective state and return the states."""
        states = dict(sorted(self.get_all_features().items()))
        for name, enabled in states.items():
            logger.info("Feature '%s': %s", name, 'ENABLED' if enabled else 'DISABLED')
        return states

    def __repr__(self) -> str:
        enabled_count = sum(1 for f in self._features.values() if f.enabled)
        return f"FeatureFlags({enabled_count}/{len(self._features)} features enabled)"


# Global instance
feature_flags = FeatureFlags()


def is_feature_enabled(feature_name: str) -> bool:
    return feature_flags.is_enabled(feature_name)


def get_feature_config(feature_name: str) -> Dict[str, Any]:
    return feature_flags.get_config(feature_name)
