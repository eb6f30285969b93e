"""Resampling, alignment, windowing and normalisation of sensor series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    rate: float
    channel_names: tuple = ("path_len",)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise SignalError("values must be (T, C)")
        if not self.rate > 0:
            raise SignalError(f"rate must be positive, got {self.rate}")
        if np.isnan(v).any():
            raise SignalError("series contains NaN")
        names = tuple(self.channel_names)
        if len(names) != v.shape[1]:
            raise SignalError(f"{v.shape[1]} channels but {len(names)} names")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", names)

    def __len__(self):
        return len(self.values)

    @property
    def duration(self) -> float:
        return (len(self.values) - 1) / self.rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.rate


@dataclass(frozen=True)
class WindowSpec:
    length: int = 50
    step: int = 10

    def __post_init__(self):
        if self.length < 1:
            raise SignalError("window length must be >= 1")
        if not 1 <= self.step <= self.length:
            raise SignalError("window step must satisfy 1 <= step <= length")

    def count(self, n_samples: int) -> int:
        if n_samples < self.length:
            return 0
        return (n_samples - self.length) // self.step + 1


def resample(series: TimeSeries, target_rate: float) -> TimeSeries:
    """Linear interpolation onto ``k / target_rate`` for k = 0..floor(duration*rate)."""
    if len(series) < 2:
        raise SignalError("resampling needs at least 2 samples")
    if not target_rate > 0:
        raise SignalError("target_rate must be positive")
    n_out = math.floor(series.duration * target_rate + 1e-9) + 1
    t_out = np.arange(n_out) / target_rate
    t_in = series.times
    out = np.column_stack([np.interp(t_out, t_in, series.values[:, c]) for c in range(series.values.shape[1])])
    return TimeSeries(out, target_rate, series.channel_names)


def windows(series, spec: WindowSpec) -> np.ndarray:
    """Stack of windows, shape (n, length, C). Trailing partial window is dropped."""
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = spec.count(len(values))
    if n == 0:
        raise SignalError(f"series of {len(values)} samples is shorter than one window of {spec.length}")
    starts = np.arange(n) * spec.step
    idx = starts[:, None] + np.arange(spec.length)[None, :]
    return values[idx]


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train) -> "Normalizer":
        arr = np.asarray(train, dtype=np.float64)
        if arr.size == 0 or len(arr) == 0:
            raise SignalError("cannot fit normalisation on an empty training split")
        flat = arr.reshape(-1, arr.shape[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))

    def apply(self, data) -> np.ndarray:
        arr = np.asarray(data, dtype=np.float64)
        scale = np.where(self.std < 1e-12, 1.0, self.std)
        return (arr - self.mean) / scale

    def invert(self, data) -> np.ndarray:
        scale = np.where(self.std < 1e-12, 1.0, self.std)
        return np.asarray(data) * scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize(windows_, stats_source) -> np.ndarray:
    return Normalizer.fit(stats_source).apply(windows_)


@dataclass(frozen=True)
class Alignment:
    sim: TimeSeries
    real: TimeSeries
    lag: int
    correlation: float


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else 0.0


def align(sim: TimeSeries, real: TimeSeries, search_lag: bool = True, max_lag=None) -> Alignment:
    """Pair two equal-rate series.

    A positive lag means ``real`` is delayed: ``real[t + lag]`` pairs with
    ``sim[t]``. The lag maximising the Pearson correlation of the first
    channels within ``max_lag`` samples (default one second) is applied,
    smallest |lag| winning ties.
    """
    if not math.isclose(sim.rate, real.rate):
        raise SignalError(f"rates differ ({sim.rate} vs {real.rate}); resample first")
    a, b = sim.values, real.values
    lag = 0
    corr = float("nan")
    if search_lag:
        limit = int(round(sim.rate)) if max_lag is None else int(max_lag)
        best = -math.inf
        for k in sorted(range(-limit, limit + 1), key=lambda x: (abs(x), x)):
            sa, sb = _lagged(a, b, k)
            if len(sa) < 2:
                continue
            c = _pearson(sa[:, 0], sb[:, 0])
            if c > best:
                best, lag = c, k
        if best == -math.inf:
            raise SignalError("no overlap between series at any lag")
        corr = best
    sa, sb = _lagged(a, b, lag)
    if len(sa) == 0:
        raise SignalError("no overlap between series after lag")
    if not search_lag and len(sa) >= 2:
        corr = _pearson(sa[:, 0], sb[:, 0])
    return Alignment(TimeSeries(sa, sim.rate, sim.channel_names), TimeSeries(sb, real.rate, real.channel_names), lag, corr)


def _lagged(a: np.ndarray, b: np.ndarray, lag: int):
    if lag >= 0:
        b = b[lag:]
    else:
        a = a[-lag:]
    n = min(len(a), len(b))
    return a[:n], b[:n]


def wrap_phase(phase):
    """Map radians into (-pi, pi]."""
    p = np.asarray(phase, dtype=np.float64)
    w = np.mod(p + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def read_signal_csv(path) -> TimeSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SignalError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t" or tuple(header[1:]) not in (("magnitude", "phase"), ("path_len",)):
        raise SignalError(f"{path}: header must be t,magnitude,phase or t,path_len")
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)
    if len(data) < 2:
        raise SignalError(f"{path}: need at least 2 samples to infer the rate")
    dt = np.diff(data[:, 0])
    rate = 1.0 / float(np.median(dt))
    return TimeSeries(data[:, 1:], rate, tuple(header[1:]))


def write_signal_csv(path, series: TimeSeries) -> None:
    names = series.channel_names
    if names not in (("magnitude", "phase"), ("path_len",)):
        raise SignalError(f"unsupported channel set {names}")
    lines = [",".join(("t",) + names)]
    for t, row in zip(series.times.tolist(), series.values.tolist()):
        lines.append(",".join([repr(t)] + [repr(x) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


POSE_JOINTS = 52


def pose_header() -> list:
    return [f"j{j:02d}_{ax}" for j in range(POSE_JOINTS) for ax in "xyz"]


def write_pose_csv(path, pose: np.ndarray) -> None:
    pose = np.asarray(pose, dtype=np.float64).reshape(len(pose), -1)
    if pose.shape[1] != POSE_JOINTS * 3:
        raise SignalError(f"pose must have {POSE_JOINTS * 3} columns")
    lines = [",".join(pose_header())] + [",".join(repr(x) for x in r) for r in pose.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pose_csv(path) -> np.ndarray:
    """Returns (T, 52, 3) axis-angle rotations."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != POSE_JOINTS * 3:
        raise SignalError(f"{path}: expected {POSE_JOINTS * 3} columns, got {arr.shape[1]}")
    return arr.reshape(len(arr), POSE_JOINTS, 3)


def stack_series(series: Sequence[TimeSeries]) -> np.ndarray:
    return np.concatenate([s.values for s in series])
