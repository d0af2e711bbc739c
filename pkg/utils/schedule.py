"""
Per-epoch learning-rate schedules.
"""

from dataclasses import dataclass
from typing import List, Protocol

from utils.error_handler import ConfigError, UsageError


class Schedule(Protocol):
    total_epochs: int

    def lr_at(self, epoch: int) -> float:
        ...


def _check_epoch(epoch: int, total: int):
    if not 0 <= epoch < total:
        raise UsageError(f"epoch {epoch} outside 0..{total - 1}")


@dataclass(frozen=True)
class TriStageSchedule:
    """
    Linear warm-up from min_lr to peak_lr, then the remaining epochs split in three:
    the first third holds peak_lr, the last two thirds decay exponentially to min_lr
    at the final epoch.
    """
    total_epochs: int
    warmup_epochs: int = 2
    peak_lr: float = 4e-4
    min_lr: float = 4e-6

    def __post_init__(self):
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")
        if self.total_epochs < self.warmup_epochs + 3:
            raise ConfigError(f"total_epochs must be at least warmup_epochs + 3 = {self.warmup_epochs + 3}, "
                              f"got {self.total_epochs}")
        if not 0 < self.min_lr <= self.peak_lr:
            raise ConfigError(f"need 0 < min_lr <= peak_lr, got {self.min_lr} and {self.peak_lr}")

    @property
    def constant_epochs(self) -> int:
        return max(1, (self.total_epochs - self.warmup_epochs) // 3)

    @property
    def decay_start(self) -> int:
        """Last epoch at peak_lr; decay is anchored here."""
        return self.warmup_epochs + self.constant_epochs - 1

    def lr_at(self, epoch: int) -> float:
        _check_epoch(epoch, self.total_epochs)
        if epoch < self.warmup_epochs:
            return self.min_lr + (self.peak_lr - self.min_lr) * epoch / self.warmup_epochs
        if epoch <= self.decay_start:
            return self.peak_lr
        last = self.total_epochs - 1
        if epoch == last:
            return self.min_lr
        fraction = (epoch - self.decay_start) / (last - self.decay_start)
        return self.peak_lr * (self.min_lr / self.peak_lr) ** fraction

    def table(self) -> List[float]:
        return [self.lr_at(e) for e in range(self.total_epochs)]


@dataclass(frozen=True)
class ConstantSchedule:
    """Fixed rate, used for joint fine-tuning and the second selection phase."""
    total_epochs: int
    lr: float = 4e-6

    def __post_init__(self):
        if self.total_epochs < 1 or self.lr <= 0:
            raise ConfigError(f"constant schedule needs epochs >= 1 and lr > 0, got {self.total_epochs}, {self.lr}")

    def lr_at(self, epoch: int) -> float:
        _check_epoch(epoch, self.total_epochs)
        return self.lr

    def table(self) -> List[float]:
        return [self.lr] * self.total_epochs
