import pytest

from utils.error_handler import ConfigError, UsageError
from utils.schedule import ConstantSchedule, TriStageSchedule


def test_fourteen_epoch_table():
    sched = TriStageSchedule(14)
    table = sched.table()
    assert table[0] == 4e-6
    assert table[1] == pytest.approx((4e-4 + 4e-6) / 2)
    assert table[2:6] == [4e-4] * 4
    assert table[6] < 4e-4
    assert table[13] == 4e-6


@pytest.mark.parametrize("total", range(8, 31))
def test_shape_holds_for_many_lengths(total):
    sched = TriStageSchedule(total)
    table = sched.table()
    assert len(table) == total
    assert table[0] == sched.min_lr
    assert table[-1] == sched.min_lr
    assert all(lr == sched.peak_lr for lr in table[sched.warmup_epochs:sched.decay_start + 1])
    decay = table[sched.decay_start:]
    assert all(a > b for a, b in zip(decay, decay[1:]))
    assert all(sched.min_lr <= lr <= sched.peak_lr for lr in table)


def test_no_warmup_starts_at_peak():
    sched = TriStageSchedule(6, warmup_epochs=0)
    assert sched.lr_at(0) == sched.peak_lr


@pytest.mark.parametrize("kwargs", [
    {"total_epochs": 4},
    {"total_epochs": 10, "warmup_epochs": -1},
    {"total_epochs": 10, "min_lr": 1e-3},
    {"total_epochs": 10, "min_lr": 0.0},
])
def test_invalid_schedules(kwargs):
    with pytest.raises(ConfigError):
        TriStageSchedule(**kwargs)


@pytest.mark.parametrize("epoch", [-1, 14])
def test_epoch_out_of_range(epoch):
    with pytest.raises(UsageError):
        TriStageSchedule(14).lr_at(epoch)


def test_constant_schedule():
    sched = ConstantSchedule(3, lr=1e-5)
    assert sched.table() == [1e-5] * 3
    with pytest.raises(UsageError):
        sched.lr_at(3)
    with pytest.raises(ConfigError):
        ConstantSchedule(0)
