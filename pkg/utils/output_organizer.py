#!/usr/bin/env python3
"""
Output Organization Utility

Checkpoint layout of a training run::

    runs/<name>/
        metadata.json
        run_config.yaml
        step<k>/epoch<e>.ckpt
        step<k>/best.ckpt
        vocab.txt
"""

import json
import logging
import shutil
from datetime import datetime
from typing import Any, Dict, List, Optional
from pathlib import Path

from models.checkpoint import load_checkpoint, save_checkpoint
from models.layers import Module
from utils.error_handler import DataError

logger = logging.getLogger(__name__)

# Training step directory per workflow phase.
STEP_NAMES = {
    1: "enhancer and baseline ASR",
    2: "ASR on enhanced audio",
    3: "joint fine-tuning",
    4: "selection training, modules only",
    5: "selection training with the transducer",
}


class OutputOrganizer:
    """Manages checkpoint and metadata files under one run directory."""

    def __init__(self, run_dir: str):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.metadata_path = self.run_dir / "metadata.json"

    def create_run_directory(self, run_name: str, config: Optional[Dict[str, Any]] = None) -> str:
        """
        Write metadata.json for a new run.

        Args:
            run_name: Name of the run (directory name)
            config: Resolved run configuration

        Returns:
            The run directory path
        """
        metadata = {
            "run_name": run_name,
            "created_at": datetime.now().isoformat(),
            "config": config or {},
            "checkpoints": {},
        }
        with open(self.metadata_path, 'w') as f:
            json.dump(metadata, f, indent=2, default=str)
        print(f"📁 Created run directory: {self.run_dir}")
        return str(self.run_dir)

    def _metadata(self) -> Dict[str, Any]:
        if self.metadata_path.exists():
            with open(self.metadata_path, 'r') as f:
                return json.load(f)
        return {"checkpoints": {}}

    def _update_metadata(self, key: str, entry: Dict[str, Any]):
        metadata = self._metadata()
        metadata.setdefault("checkpoints", {})[key] = entry
        with open(self.metadata_path, 'w') as f:
            json.dump(metadata, f, indent=2, default=str)

    def step_dir(self, step: int) -> Path:
        path = self.run_dir / f"step{step}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def checkpoint_path(self, step: int, epoch: int, model: str = "") -> Path:
        prefix = f"{model}_" if model else ""
        return self.step_dir(step) / f"{prefix}epoch{epoch}.ckpt"

    def best_path(self, step: int, model: str = "") -> Path:
        prefix = f"{model}_" if model else ""
        return self.step_dir(step) / f"{prefix}best.ckpt"

    def save_epoch(self, module: Module, step: int, epoch: int, model: str = "",
                   val_loss: Optional[float] = None) -> Path:
        path = save_checkpoint(self.checkpoint_path(step, epoch, model), module.state_dict())
        self._update_metadata(f"step{step}/{path.name}", {
            "model": model, "epoch": epoch, "val_loss": val_loss, "checksum": module.checksum(),
        })
        return path

    def mark_best(self, step: int, epoch: int, model: str = "") -> Path:
        source = self.checkpoint_path(step, epoch, model)
        target = self.best_path(step, model)
        shutil.copyfile(source, target)
        self._update_metadata(f"step{step}/{target.name}", {"model": model, "epoch": epoch, "source": source.name})
        logger.info("Best %s checkpoint for step %d: epoch %d", model or "model", step, epoch)
        return target

    def load_into(self, module: Module, path: Path) -> Module:
        module.load_state_dict(load_checkpoint(path))
        return module

    def list_checkpoints(self, step: Optional[int] = None) -> List[Path]:
        pattern = f"step{step}/*.ckpt" if step is not None else "step*/*.ckpt"
        return sorted(self.run_dir.glob(pattern))

    def require(self, path: Path) -> Path:
        if not Path(path).exists():
            raise DataError(f"checkpoint not found: {path}")
        return Path(path)
