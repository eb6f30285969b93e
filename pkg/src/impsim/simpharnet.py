"""Contrastive pretraining of impedance and text encoders (InfoNCE over cosine)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .nncore import (GELU, AdamW, BatchNorm, Conv1d, Dense, Dropout, EarlyStopping, Flatten, MaxPool1d, Model,
                     PlateauScheduler, Sequential, TrainSchedule)
from .nncore.losses import log_softmax
from .signal import Normalizer

NORM_FLOOR = 1e-12


def cosine(q, k) -> float:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape:
        raise ValueError(f"cosine: dimension mismatch {q.shape} vs {k.shape}")
    nq, nk = np.linalg.norm(q), np.linalg.norm(k)
    if nq < NORM_FLOOR or nk < NORM_FLOOR:
        raise ValueError("cosine: vector norm too close to zero")
    return float(np.clip(q @ k / (nq * nk), -1.0, 1.0))


def _unit(x: np.ndarray):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n < NORM_FLOOR):
        raise ValueError("embedding norm too close to zero")
    return x / n, n


def similarity_matrix(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    qn, _ = _unit(np.asarray(q, dtype=np.float64))
    kn, _ = _unit(np.asarray(k, dtype=np.float64))
    return qn @ kn.T


def info_nce_from_similarities(s: np.ndarray):
    """Loss and dL/ds for a square similarity matrix whose diagonal holds the positives."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if n < 2:
        raise ValueError("InfoNCE needs at least 2 pairs (no negatives otherwise)")
    lp = log_softmax(s)
    loss = -float(np.trace(lp)) / n
    grad = np.exp(lp)
    grad[np.arange(n), np.arange(n)] -= 1.0
    return loss, grad / n


def info_nce(q: np.ndarray, k: np.ndarray, temperature: float = 1.0):
    """Batch InfoNCE: row i of ``q`` is matched with row i of ``k``; other rows are negatives.

    Returns ``(loss, (dL/dq, dL/dk))``. With the default temperature of 1 the
    logits are the raw cosine similarities.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 2:
        raise ValueError(f"info_nce: q and k must be matching (N, D) arrays, got {q.shape} and {k.shape}")
    if len(q) < 2:
        raise ValueError("InfoNCE needs at least 2 pairs (no negatives otherwise)")
    qn, nq = _unit(q)
    kn, nk = _unit(k)
    s = qn @ kn.T
    loss, ds = info_nce_from_similarities(s / temperature)
    ds = ds / temperature
    dqn = ds @ kn
    dkn = ds.T @ qn
    dq = (dqn - np.sum(dqn * qn, axis=1, keepdims=True) * qn) / nq
    dk = (dkn - np.sum(dkn * kn, axis=1, keepdims=True) * kn) / nk
    return loss, (dq, dk)


def imp_encoder_specs(channels: int = 2, embedding_dim: int = 256, filters=(16, 32), kernel: int = 5) -> list:
    """Conv stack over (channels, window); global max-pool keeps it window-length agnostic."""
    c1, c2 = filters
    return [
        {"kind": "conv1d", "in_channels": channels, "out_channels": c1, "kernel": kernel, "stride": 1},
        {"kind": "gelu"},
        {"kind": "conv1d", "in_channels": c1, "out_channels": c2, "kernel": kernel, "stride": 1},
        {"kind": "gelu"},
        {"kind": "max_pool1d", "kernel": None, "stride": None},
        {"kind": "flatten"},
        {"kind": "dense", "in": c2, "out": embedding_dim},
    ]


def text_encoder_specs(in_dim: int = 768, embedding_dim: int = 256, hidden: int = 256, dropout: float = 0.1) -> list:
    return [
        {"kind": "dense", "in": in_dim, "out": hidden},
        {"kind": "batch_norm", "features": hidden},
        {"kind": "gelu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "in": hidden, "out": hidden},
        {"kind": "batch_norm", "features": hidden},
        {"kind": "gelu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "in": hidden, "out": embedding_dim},
    ]


def encode_windows(encoder: Sequential, windows: np.ndarray, train: bool = False) -> np.ndarray:
    """(B, L, C) windows -> (B, D) embeddings."""
    return encoder.forward(np.ascontiguousarray(np.asarray(windows).transpose(0, 2, 1)), train)


@dataclass
class PretrainConfig:
    embedding_dim: int = 256
    text_dim: int = 768
    text_hidden: int = 256
    text_dropout: float = 0.1
    imp_filters: tuple = (16, 32)
    temperature: float = 1.0
    batch_size: int = 32
    val_fraction: float = 0.1
    steps_per_epoch: Optional[int] = None


@dataclass
class PretrainResult:
    model: Model
    normalizer: Normalizer
    prompt_ids: list
    report: dict = field(default_factory=dict)

    @property
    def imp_encoder(self) -> Sequential:
        return self.model.blocks["imp"]

    @property
    def text_encoder(self) -> Sequential:
        return self.model.blocks["text"]


def build_encoder_pair(cfg: PretrainConfig, channels: int, rng: np.random.Generator) -> Model:
    return Model.from_specs({
        "imp": imp_encoder_specs(channels, cfg.embedding_dim, tuple(cfg.imp_filters)),
        "text": text_encoder_specs(cfg.text_dim, cfg.embedding_dim, cfg.text_hidden, cfg.text_dropout),
    }, rng)


def retrieval(model: Model, windows: np.ndarray, owners: np.ndarray, text: np.ndarray, temperature: float = 1.0):
    """Loss of each window against all prompts, and top-1 prompt accuracy."""
    q = encode_windows(model.blocks["imp"], windows)
    k = model.blocks["text"].forward(text, False)
    s = similarity_matrix(q, k) / temperature
    lp = log_softmax(s)
    loss = -float(lp[np.arange(len(owners)), owners].mean())
    acc = float(np.mean(np.argmax(s, axis=1) == owners))
    return loss, acc


def pretrain(windows_by_prompt: dict, text_embeddings: dict, schedule: TrainSchedule, cfg: PretrainConfig,
             rng: np.random.Generator, log=None) -> PretrainResult:
    """Align impedance windows with the text embedding of the prompt that produced them.

    ``windows_by_prompt`` maps prompt id to an ``(n, L, C)`` array; every
    prompt must also have a row in ``text_embeddings``. Each training batch
    draws distinct prompts with one window each, so the other prompts in the
    batch act as negatives. The encoders with the lowest held-out retrieval
    loss are returned.
    """
    prompt_ids = sorted(windows_by_prompt)
    if len(prompt_ids) < 2:
        raise ValueError("pretraining needs at least 2 distinct prompts")
    missing = [p for p in prompt_ids if p not in text_embeddings]
    if missing:
        raise ValueError(f"no text embedding for prompts {missing}")
    for p in prompt_ids:
        if len(windows_by_prompt[p]) < 1:
            raise ValueError(f"prompt {p!r} has no simulated windows")
    text = np.stack([np.asarray(text_embeddings[p], dtype=np.float64) for p in prompt_ids])
    if text.shape[1] != cfg.text_dim:
        cfg = PretrainConfig(**{**cfg.__dict__, "text_dim": text.shape[1]})

    train_w, train_o, val_w, val_o = [], [], [], []
    for i, p in enumerate(prompt_ids):
        w = np.asarray(windows_by_prompt[p], dtype=np.float64)
        order = rng.permutation(len(w))
        n_val = int(round(len(w) * cfg.val_fraction)) if len(w) >= 2 else 0
        n_val = max(n_val, 1) if len(w) >= 2 else 0
        val_w.append(w[order[:n_val]])
        val_o += [i] * n_val
        train_w.append(w[order[n_val:]])
        train_o += [i] * (len(w) - n_val)
    train_x = np.concatenate(train_w)
    train_o = np.array(train_o)
    normalizer = Normalizer.fit(train_x)
    train_x = normalizer.apply(train_x)
    val_x = normalizer.apply(np.concatenate(val_w)) if val_o else train_x
    val_o = np.array(val_o) if val_o else train_o
    by_prompt = [np.flatnonzero(train_o == i) for i in range(len(prompt_ids))]

    model = build_encoder_pair(cfg, train_x.shape[2], rng)
    model.set_rng(rng)
    opt = AdamW(schedule.learning_rate, weight_decay=schedule.weight_decay)
    sched = PlateauScheduler(schedule.learning_rate, schedule.plateau_patience, schedule.plateau_factor,
                             schedule.min_lr)
    stopper = EarlyStopping(schedule.early_stop_patience)
    batch = min(len(prompt_ids), cfg.batch_size)
    n_batches = cfg.steps_per_epoch or max(1, math.ceil(len(train_x) / batch))

    init_batch = _sample_batch(rng, by_prompt, batch)
    q0 = encode_windows(model.blocks["imp"], train_x[init_batch])
    k0 = model.blocks["text"].forward(text[train_o[init_batch]], False)
    init_loss = info_nce(q0, k0, cfg.temperature)[0]

    best_state = model.state()
    history = []
    for epoch in range(1, schedule.max_epochs + 1):
        opt.learning_rate = sched.lr
        losses = []
        for _ in range(n_batches):
            idx = _sample_batch(rng, by_prompt, batch)
            model.zero_grad()
            q = encode_windows(model.blocks["imp"], train_x[idx], train=True)
            k = model.blocks["text"].forward(text[train_o[idx]], True)
            loss, (dq, dk) = info_nce(q, k, cfg.temperature)
            model.blocks["imp"].backward(dq.reshape(q.shape))
            model.blocks["text"].backward(dk)
            opt.step(model.params(), model.grads())
            losses.append(loss)
        val_loss, val_acc = retrieval(model, val_x, val_o, text, cfg.temperature)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
                        "val_top1": val_acc, "lr": opt.learning_rate})
        if log:
            log(history[-1])
        if stopper.step(val_loss):
            best_state = model.state()
        sched.step(val_loss)
        if stopper.should_stop:
            break
    model.load_state(best_state)
    val_loss, val_acc = retrieval(model, val_x, val_o, text, cfg.temperature)
    report = {
        "prompts": prompt_ids,
        "embedding_dim": cfg.embedding_dim,
        "batch_size": batch,
        "initial_loss": init_loss,
        "ln_batch": math.log(batch),
        "best_epoch": stopper.best_epoch,
        "epochs_run": len(history),
        "history": history,
        "val_loss": val_loss,
        "val_top1": val_acc,
    }
    return PretrainResult(model, normalizer, prompt_ids, report)


def _sample_batch(rng: np.random.Generator, by_prompt: list, batch: int) -> np.ndarray:
    prompts = rng.choice(len(by_prompt), size=batch, replace=False)
    return np.array([by_prompt[p][rng.integers(len(by_prompt[p]))] for p in np.sort(prompts)])


def read_text_embeddings(path):
    """``prompt_id,class_hint,dim0,...`` rows -> ({prompt_id: vector}, {prompt_id: class_hint})."""
    vectors, hints = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["prompt_id", "class_hint"]:
            raise ValueError(f"{path}: header must start with prompt_id,class_hint")
        dim = len(header) - 2
        for row in reader:
            if not row:
                continue
            if len(row) != dim + 2:
                raise ValueError(f"{path}: row for {row[0]!r} has {len(row) - 2} dims, expected {dim}")
            v = np.array([float(x) for x in row[2:]])
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{path}: non-finite embedding for {row[0]!r}")
            vectors[row[0]] = v
            hints[row[0]] = row[1]
    return vectors, hints


def write_text_embeddings(path, vectors: dict, hints: dict) -> None:
    ids = list(vectors)
    dim = len(next(iter(vectors.values())))
    lines = [",".join(["prompt_id", "class_hint"] + [f"dim{i}" for i in range(dim)])]
    for p in ids:
        lines.append(",".join([p, str(hints.get(p, ""))] + [repr(float(x)) for x in vectors[p]]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
