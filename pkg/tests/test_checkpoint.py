import numpy as np
import pytest

from models.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from models.dcrn import build_dcrn, dcrn_preset
from models.layers import Linear
from utils.error_handler import DataError, ShapeError


def test_model_state_round_trip(tmp_path):
    model = build_dcrn(dcrn_preset("tiny"), seed=0)
    path = save_checkpoint(tmp_path / "dcrn.ckpt", model.state_dict())
    assert path.read_bytes()[:4] == MAGIC

    other = build_dcrn(dcrn_preset("tiny"), seed=1)
    assert other.checksum() != model.checksum()
    other.load_state_dict(load_checkpoint(path))
    assert other.checksum() == model.checksum()


def test_scalars_and_empty_state(tmp_path):
    state = {"scale": np.array(2.5), "grid": np.arange(6.0).reshape(1, 2, 3)}
    loaded = load_checkpoint(save_checkpoint(tmp_path / "a.ckpt", state))
    assert loaded["scale"].shape == () and float(loaded["scale"]) == 2.5
    np.testing.assert_array_equal(loaded["grid"], state["grid"])
    assert load_checkpoint(save_checkpoint(tmp_path / "empty.ckpt", {})) == {}


def test_corrupt_files_are_rejected(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.ckpt")

    (tmp_path / "bad.ckpt").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.ckpt")

    blob = save_checkpoint(tmp_path / "ok.ckpt", {"w": np.ones((3, 3))}).read_bytes()
    (tmp_path / "short.ckpt").write_bytes(blob[:-5])
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "short.ckpt")

    (tmp_path / "long.ckpt").write_bytes(blob + b"\x00")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "long.ckpt")


def test_state_must_match_module():
    layer = Linear(3, 2, np.random.default_rng(0))
    state = layer.state_dict()
    with pytest.raises(ShapeError):
        layer.load_state_dict({"weight": state["weight"]})
    with pytest.raises(ShapeError):
        layer.load_state_dict({"weight": np.zeros((2, 3)), "bias": state["bias"]})
    with pytest.raises(ShapeError):
        layer.load_state_dict(dict(state, extra=np.zeros(1)))
