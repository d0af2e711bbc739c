import json
import logging

import pandas as pd

from utils import state_logger
from utils.state_logger import METRIC_COLUMNS, finalize_logging, initialize_run_logger


def test_tables_are_written_per_phase(tmp_path):
    run_logger = initialize_run_logger(str(tmp_path))
    assert state_logger.run_logger is run_logger
    run_logger.log_epoch("asr", 0, 4e-6, 3.5, val_loss=3.0, val_wer=80.0)
    run_logger.log_epoch("asr", 1, 2e-4, 2.5)
    run_logger.log_consistency("asr", 0, "s1s3", {"nll_i": 1.0, "nll_j": 1.2, "kl": 0.1, "lambda_aux": 0.5})
    run_logger.log_augmentation("asr", 0, 0, {"noise": 1, "enhance": 0, "snr_db": "3.00", "pair_id": ""})

    metrics = pd.read_csv(tmp_path / "metrics_asr.csv")
    assert list(metrics.columns) == METRIC_COLUMNS
    assert list(metrics["epoch"]) == [0, 1]
    assert pd.isna(metrics.loc[1, "val_wer"])
    assert pd.read_csv(tmp_path / "consistency_asr.csv").loc[0, "pair_id"] == "s1s3"
    assert pd.read_csv(tmp_path / "augment_asr.csv").loc[0, "noise"] == 1
    assert len(run_logger.table("metrics_asr")) == 2
    assert run_logger.table("unknown").empty


def test_summary_lists_tables_and_events(tmp_path):
    run_logger = initialize_run_logger(str(tmp_path))
    run_logger.log_epoch("enhancer", 0, 1e-4, 0.2)
    run_logger.log_event("phase_complete", phase="enhancer", best_epoch=0)
    logging.getLogger("probe").info("hello workflow log")

    summary = finalize_logging({"workflow_status": "completed"})
    assert state_logger.run_logger is None
    assert summary["tables"] == ["metrics_enhancer.csv"]
    assert summary["events"][0]["event"] == "phase_complete"
    assert summary["workflow_status"] == "completed"

    on_disk = json.loads((tmp_path / "run_summary.json").read_text())
    assert on_disk["events"][0]["best_epoch"] == 0
    assert "hello workflow log" in (tmp_path / "workflow.log").read_text()


def test_errors_go_to_error_log(tmp_path):
    run_logger = initialize_run_logger(str(tmp_path))
    run_logger.log_error("phase failed", ValueError("boom"), node_name="train_asr")
    summary = finalize_logging()
    record = (tmp_path / "errors.log").read_text()
    assert "boom" in record and "train_asr" in record
    assert summary["error_log"] == "errors.log"


def test_reinitializing_detaches_previous_handlers(tmp_path):
    first = initialize_run_logger(str(tmp_path / "a"))
    initialize_run_logger(str(tmp_path / "b"))
    assert first._handlers == []
    logging.getLogger("probe").info("only in b")
    assert "only in b" not in (tmp_path / "a" / "workflow.log").read_text()
    assert "only in b" in (tmp_path / "b" / "workflow.log").read_text()


def test_finalize_without_logger_is_noop():
    state_logger.run_logger = None
    assert finalize_logging() is None
