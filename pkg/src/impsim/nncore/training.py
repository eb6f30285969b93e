"""Schedules and stopping rules shared by every training loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

IMPROVEMENT = 1e-8


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 300
    early_stop_patience: int = 15
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    min_lr: float = 1e-6
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "TrainSchedule":
        d = asdict(self)
        d.update(kw)
        return TrainSchedule(**d)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.1, min_lr: float = 1e-6):
        self.lr, self.patience, self.factor, self.min_lr = lr, patience, factor, min_lr
        self.best = np.inf
        self.bad = 0

    def step(self, loss: float) -> float:
        if loss < self.best - IMPROVEMENT:
            self.best = loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad = 0
        return self.lr

    def reset(self) -> None:
        self.best = np.inf
        self.bad = 0


def plateau_scheduler(history, schedule: TrainSchedule, lr: Optional[float] = None) -> float:
    """Learning rate after replaying ``history`` through the plateau rule."""
    sched = PlateauScheduler(schedule.learning_rate if lr is None else lr, schedule.plateau_patience,
                             schedule.plateau_factor, schedule.min_lr)
    for loss in history:
        sched.step(loss)
    return sched.lr


class EarlyStopping:
    """Tracks the best epoch (1-based) and signals a stop after ``patience`` flat epochs."""

    def __init__(self, patience: int = 15):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def step(self, loss: float) -> bool:
        """Record one epoch; returns True when this epoch improved on the best."""
        self.epoch += 1
        if loss < self.best - IMPROVEMENT:
            self.best, self.best_epoch, self.bad = loss, self.epoch, 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience

    def reset_patience(self) -> None:
        self.bad = 0


def early_stop(history, patience: int = 15):
    """``(stop, best_epoch)`` for a validation-loss history, epochs 1-based."""
    es = EarlyStopping(patience)
    for loss in history:
        es.step(loss)
        if es.should_stop:
            return True, es.best_epoch
    return False, es.best_epoch


def minibatches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def split_train_val(rng: np.random.Generator, n: int, val_fraction: float = 0.1):
    """Random 9:1 split (by default); validation gets at least one item when n >= 2."""
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n >= 2 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def blocked_split(rng: np.random.Generator, n: int, block: int, val_fraction: float = 0.1, gap: int = 0):
    """Random split over contiguous blocks of ``block`` items.

    Training items within ``gap`` positions of a validation block are
    dropped, so heavily overlapping sliding windows cannot leak across the
    split.
    """
    n_blocks = max(1, -(-n // block))
    if n_blocks < 2:
        return split_train_val(rng, n, val_fraction)
    n_val = max(1, int(round(n_blocks * val_fraction)))
    val_blocks = rng.permutation(n_blocks)[:n_val]
    is_val = np.zeros(n, dtype=bool)
    for b in val_blocks:
        is_val[b * block:(b + 1) * block] = True
    near = is_val.copy()
    if gap > 0:
        idx = np.flatnonzero(is_val)
        for shift in range(1, gap + 1):
            near[np.clip(idx - shift, 0, n - 1)] = True
            near[np.clip(idx + shift, 0, n - 1)] = True
    train = np.flatnonzero(~near)
    return train, np.flatnonzero(is_val)


def stage_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named stage of a seeded run."""
    import zlib

    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode("utf-8"))]))
