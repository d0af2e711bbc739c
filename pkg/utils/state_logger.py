"""
Run-scoped logging: workflow.log, errors.log, metric tables and a run summary.
"""

import os
import json
import logging
from datetime import datetime
from typing import Dict, Any, List, Optional
from pathlib import Path

import pandas as pd

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

METRIC_COLUMNS = ["epoch", "lr", "train_loss", "val_loss", "val_wer"]
CONSISTENCY_COLUMNS = ["step", "pair_id", "nll_i", "nll_j", "kl", "lambda_aux"]
AUGMENT_COLUMNS = ["epoch", "batch", "noise", "enhance", "snr_db", "pair_id"]


def configure_logging(level: Optional[str] = None):
    """Console logging at SERNNT_LOG_LEVEL (default INFO)."""
    level_name = (level or os.getenv('SERNNT_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


class RunLogger:
    """
    Owns the run directory's log files and tables.

    Every phase gets its own CSV per table kind, rewritten in full on each
    append so a crashed run still leaves readable files.
    """

    def __init__(self, run_dir: str):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.run_timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.started_at = datetime.now().isoformat()
        self._tables: Dict[str, List[Dict[str, Any]]] = {}
        self._events: List[Dict[str, Any]] = []
        self._handlers: List[logging.Handler] = []
        self.setup_file_logging()

    def setup_file_logging(self):
        """Attach workflow.log (INFO) and errors.log (ERROR) to the root logger."""
        formatter = logging.Formatter(LOG_FORMAT)
        root = logging.getLogger()
        for filename, level in (("workflow.log", logging.INFO), ("errors.log", logging.ERROR)):
            handler = logging.FileHandler(self.run_dir / filename, encoding='utf-8')
            handler.setLevel(level)
            handler.setFormatter(formatter)
            root.addHandler(handler)
            self._handlers.append(handler)
        if root.level > logging.INFO or root.level == logging.NOTSET:
            root.setLevel(logging.INFO)
        self.error_logger = logging.getLogger(f"run_errors_{self.run_timestamp}")

    def close(self):
        root = logging.getLogger()
        for handler in self._handlers:
            root.removeHandler(handler)
            handler.close()
        self._handlers = []

    # -- tables ------------------------------------------------------------
    def _append(self, table: str, row: Dict[str, Any], columns: List[str]):
        rows = self._tables.setdefault(table, [])
        rows.append(row)
        pd.DataFrame(rows, columns=columns).to_csv(self.run_dir / f"{table}.csv", index=False)

    def log_epoch(self, phase: str, epoch: int, lr: float, train_loss: float,
                  val_loss: Optional[float] = None, val_wer: Optional[float] = None):
        self._append(f"metrics_{phase}", {
            "epoch": epoch, "lr": lr, "train_loss": train_loss,
            "val_loss": val_loss, "val_wer": val_wer,
        }, METRIC_COLUMNS)
        logging.getLogger(__name__).info(
            "[%s] epoch %d lr=%.3g train_loss=%.4f val_loss=%s val_wer=%s", phase, epoch, lr, train_loss,
            "-" if val_loss is None else f"{val_loss:.4f}", "-" if val_wer is None else f"{val_wer:.2f}")

    def log_consistency(self, phase: str, step: int, pair_id: str, terms: Dict[str, float]):
        row = {"step": step, "pair_id": pair_id}
        row.update(terms)
        self._append(f"consistency_{phase}", row, CONSISTENCY_COLUMNS)

    def log_augmentation(self, phase: str, epoch: int, batch: int, plan_row: Dict[str, Any]):
        row = {"epoch": epoch, "batch": batch}
        row.update(plan_row)
        self._append(f"augment_{phase}", row, AUGMENT_COLUMNS)

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.run_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
        return path

    def table(self, name: str) -> pd.DataFrame:
        return pd.DataFrame(self._tables.get(name, []))

    # -- events --------------------------------------------------------------
    def log_event(self, name: str, **details: Any):
        """Record a phase boundary or other milestone in the run summary."""
        event = {"timestamp": datetime.now().isoformat(), "event": name}
        event.update(details)
        self._events.append(event)
        logging.getLogger(__name__).info("%s %s", name, json.dumps(details, default=str))

    def log_error(self, message: str, error: Exception, node_name: Optional[str] = None):
        error_info = {
            "timestamp": datetime.now().isoformat(),
            "message": message,
            "error_type": type(error).__name__,
            "error_details": str(error),
            "node_name": node_name,
        }
        self.error_logger.error(json.dumps(error_info))

    def create_summary(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Write run_summary.json listing tables, events and log files."""
        summary = {
            "run_id": self.run_timestamp,
            "start_time": self.started_at,
            "end_time": datetime.now().isoformat(),
            "run_directory": str(self.run_dir),
            "tables": sorted(f"{name}.csv" for name in self._tables),
            "events": self._events,
        }
        error_log = self.run_dir / "errors.log"
        if error_log.exists() and error_log.stat().st_size > 0:
            summary["error_log"] = "errors.log"
        if extra:
            summary.update(extra)
        with open(self.run_dir / "run_summary.json", 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, ensure_ascii=False, default=str)
        return summary


# Global run logger instance
run_logger: Optional[RunLogger] = None


def initialize_run_logger(run_dir: str) -> RunLogger:
    global run_logger
    if run_logger is not None:
        run_logger.close()
    run_logger = RunLogger(run_dir)
    return run_logger


def finalize_logging(extra: Optional[Dict[str, Any]] = None) -> Optional[Dict[str, Any]]:
    """Create the final summary and detach file handlers."""
    global run_logger
    if run_logger is None:
        return None
    summary = run_logger.create_summary(extra)
    run_logger.close()
    run_logger = None
    return summary
