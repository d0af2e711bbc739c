import json

import numpy as np
import pytest

from models.layers import Linear
from utils.error_handler import DataError
from utils.output_organizer import OutputOrganizer


def test_checkpoint_layout_and_metadata(tmp_path):
    organizer = OutputOrganizer(str(tmp_path))
    organizer.create_run_directory("demo", {"seed": 0})
    layer = Linear(3, 2, np.random.default_rng(0))

    path = organizer.save_epoch(layer, step=1, epoch=0, model="rnnt", val_loss=1.5)
    assert path == tmp_path / "step1" / "rnnt_epoch0.ckpt"
    best = organizer.mark_best(step=1, epoch=0, model="rnnt")
    assert best == tmp_path / "step1" / "rnnt_best.ckpt"
    assert organizer.list_checkpoints(1) == [best, path]

    metadata = json.loads((tmp_path / "metadata.json").read_text())
    assert metadata["run_name"] == "demo"
    assert metadata["checkpoints"]["step1/rnnt_epoch0.ckpt"]["checksum"] == layer.checksum()
    assert metadata["checkpoints"]["step1/rnnt_best.ckpt"]["source"] == "rnnt_epoch0.ckpt"


def test_load_into_restores_weights(tmp_path):
    organizer = OutputOrganizer(str(tmp_path))
    source = Linear(3, 2, np.random.default_rng(1))
    organizer.save_epoch(source, step=2, epoch=3)
    target = organizer.load_into(Linear(3, 2, np.random.default_rng(2)), organizer.checkpoint_path(2, 3))
    assert target.checksum() == source.checksum()


def test_require_reports_missing_checkpoint(tmp_path):
    organizer = OutputOrganizer(str(tmp_path))
    with pytest.raises(DataError):
        organizer.require(tmp_path / "step9" / "best.ckpt")
