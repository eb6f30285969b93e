"""Neural grounding: simulated path length + pose -> user-specific impedance.

Both branches encode a 60-frame window into a 512-vector with a small
temporal-convolution stack; the decoder treats the two encodings as two
channels of a 1-D signal, convolves, and regresses (magnitude, phase) for the
window's final frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .nncore import (AdamW, EarlyStopping, blocked_split, Model, PlateauScheduler, TrainSchedule, minibatches, mse,
                     split_train_val)
from .signal import Normalizer, WindowSpec, windows

POSE_CHANNELS = 52 * 3
FEATURES = 512


class AblationMode(str, Enum):
    POSE_ONLY = "pose_only"
    DISTANCE_ONLY = "distance_only"
    BOTH = "both"


def _encoder_specs(channels: int, window: int, filters=(8, 16), kernel: int = 5, first_kernel: int = 5) -> list:
    c1, c2 = filters
    pooled = ((window - first_kernel + 1) - kernel + 1) // 2
    return [
        {"kind": "conv1d", "in_channels": channels, "out_channels": c1, "kernel": first_kernel, "stride": 1},
        {"kind": "gelu"},
        {"kind": "conv1d", "in_channels": c1, "out_channels": c2, "kernel": kernel, "stride": 1},
        {"kind": "gelu"},
        {"kind": "max_pool1d", "kernel": 2, "stride": 2},
        {"kind": "flatten"},
        {"kind": "dense", "in": c2 * pooled, "out": FEATURES},
    ]


def _decoder_specs(hidden: int = 64) -> list:
    lo = (FEATURES - 8) // 4 + 1
    return [
        {"kind": "reshape", "shape": [2, FEATURES]},
        {"kind": "conv1d", "in_channels": 2, "out_channels": 4, "kernel": 8, "stride": 4},
        {"kind": "gelu"},
        {"kind": "flatten"},
        {"kind": "dense", "in": 4 * lo, "out": hidden},
        {"kind": "gelu"},
        {"kind": "dense", "in": hidden, "out": 2},
    ]


@dataclass
class GroundingModel:
    net: Model
    mode: AblationMode = AblationMode.BOTH
    window: int = 60
    path_norm: Optional[Normalizer] = None
    pose_norm: Optional[Normalizer] = None
    target_norm: Optional[Normalizer] = None

    @classmethod
    def create(cls, rng: np.random.Generator, mode=AblationMode.BOTH, window: int = 60) -> "GroundingModel":
        net = Model.from_specs({
            "path": _encoder_specs(1, window),
            "pose": _encoder_specs(POSE_CHANNELS, window, filters=(16, 16), first_kernel=1),
            "decoder": _decoder_specs(),
        }, rng)
        return cls(net, AblationMode(mode), window)

    def active_blocks(self) -> list:
        blocks = ["decoder"]
        if self.mode != AblationMode.POSE_ONLY:
            blocks.append("path")
        if self.mode != AblationMode.DISTANCE_ONLY:
            blocks.append("pose")
        return blocks

    def check_shapes(self, path_w: np.ndarray, pose_w: np.ndarray) -> None:
        if path_w.ndim != 3 or path_w.shape[1:] != (self.window, 1):
            raise ValueError(f"path window must be (B, {self.window}, 1), got {path_w.shape}")
        if pose_w.ndim != 3 or pose_w.shape[1:] != (self.window, POSE_CHANNELS):
            raise ValueError(f"pose window must be (B, {self.window}, {POSE_CHANNELS}), got {pose_w.shape}")

    def forward_normalized(self, path_w: np.ndarray, pose_w: np.ndarray, train: bool = False) -> np.ndarray:
        """Inputs already normalized, (B, T, 1) and (B, T, 156); output (B, 2) in target z-space."""
        self.check_shapes(path_w, pose_w)
        b = len(path_w)
        blocks = self.net.blocks
        if self.mode == AblationMode.POSE_ONLY:
            fp = np.zeros((b, FEATURES))
        else:
            fp = blocks["path"].forward(np.ascontiguousarray(path_w.transpose(0, 2, 1)), train)
        if self.mode == AblationMode.DISTANCE_ONLY:
            fq = np.zeros((b, FEATURES))
        else:
            fq = blocks["pose"].forward(np.ascontiguousarray(pose_w.transpose(0, 2, 1)), train)
        return blocks["decoder"].forward(np.concatenate([fp, fq], axis=1), train)

    def backward(self, grad: np.ndarray) -> None:
        g = self.net.blocks["decoder"].backward(grad)
        if self.mode != AblationMode.POSE_ONLY:
            self.net.blocks["path"].backward(g[:, :FEATURES])
        if self.mode != AblationMode.DISTANCE_ONLY:
            self.net.blocks["pose"].backward(g[:, FEATURES:])

    def _prep(self, path_w, pose_w):
        path_w = np.asarray(path_w, dtype=np.float64)
        pose_w = np.asarray(pose_w, dtype=np.float64)
        if path_w.ndim == 2:
            path_w = path_w[:, :, None]
        if pose_w.ndim == 4:
            pose_w = pose_w.reshape(pose_w.shape[0], pose_w.shape[1], -1)
        if self.path_norm is not None:
            path_w = self.path_norm.apply(path_w)
        if self.pose_norm is not None:
            pose_w = self.pose_norm.apply(pose_w)
        return path_w, pose_w

    def predict(self, path_w, pose_w) -> np.ndarray:
        """(B, T) path and (B, T, 52, 3) pose windows -> (B, 2) (magnitude, phase) in physical units."""
        p, q = self._prep(path_w, pose_w)
        out = self.forward_normalized(p, q, False)
        return self.target_norm.invert(out) if self.target_norm is not None else out

    def meta(self) -> dict:
        return {
            "kind": "grounding",
            "mode": self.mode.value,
            "window": self.window,
            "path_norm": self.path_norm.to_dict() if self.path_norm else None,
            "pose_norm": self.pose_norm.to_dict() if self.pose_norm else None,
            "target_norm": self.target_norm.to_dict() if self.target_norm else None,
        }

    @classmethod
    def from_checkpoint(cls, net: Model, meta: dict) -> "GroundingModel":
        load = lambda d: Normalizer.from_dict(d) if d else None  # noqa: E731
        return cls(net, AblationMode(meta["mode"]), meta["window"], load(meta["path_norm"]),
                   load(meta["pose_norm"]), load(meta["target_norm"]))


def grounding_forward(model: GroundingModel, path_window, pose_window):
    """Single-window convenience: (60,1) path, (60,52,3) pose -> (magnitude, phase)."""
    path_window = np.asarray(path_window, dtype=np.float64).reshape(1, -1, 1)
    pose_window = np.asarray(pose_window, dtype=np.float64)
    if pose_window.shape[1:] != (52, 3):
        raise ValueError(f"pose window must be (T, 52, 3), got {pose_window.shape}")
    out = model.predict(path_window[:, :, 0], pose_window[None])
    return float(out[0, 0]), float(out[0, 1])


@dataclass
class GroundingData:
    """Windows ending at each target frame: path (n, T), pose (n, T, 156), target (n, 2)."""

    path: np.ndarray
    pose: np.ndarray
    target: np.ndarray
    stride: int = 1

    def __len__(self):
        return len(self.target)

    def subset(self, idx) -> "GroundingData":
        return GroundingData(self.path[idx], self.pose[idx], self.target[idx], self.stride)

    @classmethod
    def concat(cls, parts) -> "GroundingData":
        parts = list(parts)
        return cls(np.concatenate([p.path for p in parts]), np.concatenate([p.pose for p in parts]),
                   np.concatenate([p.target for p in parts]), parts[0].stride)


def make_windows(path_len, pose, impedance, spec: WindowSpec = WindowSpec(60, 1)) -> GroundingData:
    """Slide over aligned per-frame series; the target is the impedance at each window's last frame."""
    path_len = np.asarray(path_len, dtype=np.float64).reshape(-1)
    pose = np.asarray(pose, dtype=np.float64).reshape(len(pose), -1)
    impedance = np.asarray(impedance, dtype=np.float64)
    n = min(len(path_len), len(pose), len(impedance))
    pw = windows(path_len[:n], spec)[:, :, 0]
    qw = windows(pose[:n], spec)
    last = np.arange(len(pw)) * spec.step + spec.length - 1
    return GroundingData(pw, qw, impedance[last], spec.step)


def r_squared(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape or len(target) < 2:
        raise ValueError("r_squared needs equal-length series with at least 2 samples")
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r_squared is undefined for a constant target")
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


def r_squared_report(pred: np.ndarray, target: np.ndarray) -> dict:
    mag = r_squared(pred[:, 0], target[:, 0])
    ph = r_squared(pred[:, 1], target[:, 1])
    return {"magnitude": mag, "phase": ph, "mean": 0.5 * (mag + ph)}


def train_grounding(data: GroundingData, mode, schedule: TrainSchedule, rng: np.random.Generator,
                    test: Optional[GroundingData] = None, val_fraction: float = 0.1, log=None):
    """Fit a GroundingModel with MSE on z-scored targets; returns ``(model, report)``.

    The checkpoint with the lowest validation MSE is kept. R^2 is reported per
    channel on the validation split, and on ``test`` when given.
    """
    if len(data) == 0:
        raise ValueError("grounding dataset is empty")
    mode = AblationMode(mode)
    # contiguous blocks: overlapping stride-1 windows would otherwise leak into validation
    span = -(-data.path.shape[1] // data.stride)
    tr_idx, va_idx = blocked_split(rng, len(data), block=2 * span, val_fraction=val_fraction, gap=span)
    if len(va_idx) == 0:
        va_idx = tr_idx
    train, val = data.subset(tr_idx), data.subset(va_idx)

    model = GroundingModel.create(rng, mode, data.path.shape[1])
    model.path_norm = Normalizer.fit(train.path[:, :, None])
    # joint rotations share units: centre per channel, one global scale
    pn = Normalizer.fit(train.pose)
    model.pose_norm = Normalizer(pn.mean, np.full_like(pn.std, max(float(np.sqrt(np.mean(pn.std ** 2))), 1e-12)))
    model.target_norm = Normalizer.fit(train.target)
    xp, xq = model._prep(train.path, train.pose)
    yt = model.target_norm.apply(train.target)
    vp, vq = model._prep(val.path, val.pose)
    yv = model.target_norm.apply(val.target)

    active = model.active_blocks()
    opt = AdamW(schedule.learning_rate, weight_decay=schedule.weight_decay)
    sched = PlateauScheduler(schedule.learning_rate, schedule.plateau_patience, schedule.plateau_factor,
                             schedule.min_lr)
    stopper = EarlyStopping(schedule.early_stop_patience)
    best = model.net.state()
    history = []
    for epoch in range(1, schedule.max_epochs + 1):
        opt.learning_rate = sched.lr
        tot = 0.0
        for idx in minibatches(rng, len(yt), schedule.batch_size):
            model.net.zero_grad()
            out = model.forward_normalized(xp[idx], xq[idx], True)
            loss, g = mse(out, yt[idx])
            model.backward(g)
            opt.step(model.net.params(active), model.net.grads(active))
            tot += loss * len(idx)
        train_eval = _eval_mse(model, xp, xq, yt)
        val_loss = _eval_mse(model, vp, vq, yv)
        history.append({"epoch": epoch, "train_loss": tot / len(yt), "train_eval_loss": train_eval,
                        "val_loss": val_loss, "lr": opt.learning_rate})
        if log:
            log(history[-1])
        if stopper.step(val_loss):
            best = model.net.state()
        sched.step(val_loss)
        if stopper.should_stop:
            break
    model.net.load_state(best)
    report = {
        "mode": mode.value,
        "n_train": int(len(tr_idx)),
        "n_val": int(len(va_idx)),
        "best_epoch": stopper.best_epoch,
        "epochs_run": len(history),
        "history": history,
        "val_r2": _r2_safe(model.predict(val.path, val.pose), val.target),
    }
    if test is not None and len(test):
        report["test_r2"] = _r2_safe(model.predict(test.path, test.pose), test.target)
    return model, report


def _eval_mse(model: GroundingModel, p, q, y, batch: int = 256) -> float:
    tot = 0.0
    for i in range(0, len(y), batch):
        out = model.forward_normalized(p[i:i + batch], q[i:i + batch], False)
        tot += float(np.sum((out - y[i:i + batch]) ** 2))
    return tot / y.size


def _r2_safe(pred, target) -> dict:
    if len(target) < 2 or np.any(np.ptp(target, axis=0) == 0):
        return {"magnitude": None, "phase": None, "mean": None}
    return r_squared_report(pred, target)
