"""Activity classification on top of the impedance encoder.

Three fine-tuning policies are supported: ``no_pretrain`` trains a freshly
initialised encoder end to end, ``frozen`` never updates the pretrained
encoder, and ``late_learning`` keeps it frozen until the validation loss
plateaus and then trains everything.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .nncore import (AdamW, EarlyStopping, Model, PlateauScheduler, Sequential, TrainSchedule, cross_entropy,
                     minibatches, softmax, split_train_val, stage_rng)
from .simpharnet import imp_encoder_specs
from .signal import Normalizer


class PolicyMode(str, Enum):
    FROZEN = "frozen"
    LATE_LEARNING = "late_learning"
    NO_PRETRAIN = "no_pretrain"


@dataclass(frozen=True)
class FinetunePolicy:
    mode: PolicyMode = PolicyMode.LATE_LEARNING
    freeze_epochs_min: int = 5
    unfreeze_plateau_patience: int = 10

    def __post_init__(self):
        object.__setattr__(self, "mode", PolicyMode(self.mode))


@dataclass
class LabeledWindows:
    x: np.ndarray
    y: np.ndarray
    users: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.users = np.asarray(self.users)
        if not len(self.x) == len(self.y) == len(self.users):
            raise ValueError("windows, labels and user ids must have equal length")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledWindows":
        return LabeledWindows(self.x[idx], self.y[idx], self.users[idx])

    @classmethod
    def concat(cls, parts) -> "LabeledWindows":
        parts = list(parts)
        return cls(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]),
                   np.concatenate([p.users for p in parts]))


def head_specs(embedding_dim: int, n_classes: int, filters: int = 8, kernel: int = 5, stride: int = 2,
               hidden: int = 64) -> list:
    lo = (embedding_dim - kernel) // stride + 1
    return [
        {"kind": "reshape", "shape": [1, embedding_dim]},
        {"kind": "conv1d", "in_channels": 1, "out_channels": filters, "kernel": kernel, "stride": stride},
        {"kind": "gelu"},
        {"kind": "flatten"},
        {"kind": "dense", "in": filters * lo, "out": hidden},
        {"kind": "gelu"},
        {"kind": "dense", "in": hidden, "out": n_classes},
    ]


@dataclass
class Classifier:
    net: Model
    n_classes: int
    normalizer: Optional[Normalizer] = None

    @property
    def encoder(self) -> Sequential:
        return self.net.blocks["encoder"]

    @property
    def head(self) -> Sequential:
        return self.net.blocks["head"]

    def features(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.encoder.forward(np.ascontiguousarray(x.transpose(0, 2, 1)), train)

    def logits(self, x: np.ndarray, batch: int = 512) -> np.ndarray:
        x = self.normalizer.apply(x) if self.normalizer is not None else np.asarray(x, dtype=np.float64)
        out = [self.head.forward(self.features(x[i:i + batch]), False) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def meta(self) -> dict:
        return {"kind": "classifier", "n_classes": self.n_classes,
                "normalizer": self.normalizer.to_dict() if self.normalizer else None}


def _argmax_low(p: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(p, axis=-1)


def predict(model: Classifier, windows):
    """Class indices and softmax probabilities for (n, L, C) windows (or one (L, C) window)."""
    w = np.asarray(windows, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.ndim != 3:
        raise ValueError(f"expected (n, L, C) windows, got {w.shape}")
    logits = model.logits(w)
    probs = softmax(logits)
    cls = _argmax_low(logits)
    return (int(cls[0]), probs[0]) if single else (cls, probs)


def predict_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    return _argmax_low(logits), softmax(logits)


def metrics(preds, labels, class_count: int) -> dict:
    """Accuracy, macro F1 and confusion matrix (rows = true class)."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(preds) != len(labels) or len(labels) < 1:
        raise ValueError("metrics need equal-length, non-empty prediction and label vectors")
    for name, arr in (("label", labels), ("prediction", preds)):
        if arr.min() < 0 or arr.max() >= class_count:
            raise ValueError(f"{name} out of range for {class_count} classes")
    conf = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    den = 2 * tp + fp + fn
    f1 = np.where(den > 0, 2 * tp / np.where(den > 0, den, 1), 0.0)
    return {"accuracy": float(tp.sum() / len(labels)), "macro_f1": float(f1.mean()), "per_class_f1": f1.tolist(),
            "confusion": conf.tolist()}


class MissingClassError(ValueError):
    pass


def _check_classes(y: np.ndarray, n_classes: int, what: str) -> None:
    missing = sorted(set(range(n_classes)) - set(np.unique(y).tolist()))
    if missing:
        raise MissingClassError(f"classes {missing} absent from the {what}")


def finetune(encoder: Optional[Sequential], data: LabeledWindows, n_classes: int, policy: FinetunePolicy,
             schedule: TrainSchedule, rng: np.random.Generator, embedding_dim: Optional[int] = None,
             val_fraction: float = 0.1, log=None):
    """Train a classifier head (and possibly the encoder); returns ``(Classifier, report)``.

    ``encoder`` is copied, never modified. It may be None only for
    ``no_pretrain``, in which case ``embedding_dim`` sizes a fresh encoder.
    """
    if len(data) == 0:
        raise ValueError("no labelled windows to fine-tune on")
    _check_classes(data.y, n_classes, "training data")
    mode = policy.mode
    if mode == PolicyMode.NO_PRETRAIN:
        dim = embedding_dim or (encoder.layers[-1].out_features if encoder is not None else 256)
        enc = Sequential.from_specs(imp_encoder_specs(data.x.shape[2], dim), rng)
    else:
        if encoder is None:
            raise ValueError(f"policy {mode.value!r} requires a pretrained encoder")
        enc = copy.deepcopy(encoder)
        enc.clear_cache()
        dim = enc.layers[-1].out_features
    net = Model({"encoder": enc, "head": Sequential.from_specs(head_specs(dim, n_classes), rng)})
    net.set_rng(rng)

    tr_idx, va_idx = split_train_val(rng, len(data), val_fraction)
    if len(va_idx) == 0:
        va_idx = tr_idx
    normalizer = Normalizer.fit(data.x[tr_idx])
    model = Classifier(net, n_classes, normalizer)
    xt, yt = normalizer.apply(data.x[tr_idx]), data.y[tr_idx]
    xv, yv = normalizer.apply(data.x[va_idx]), data.y[va_idx]

    encoder_digest0 = net.digest(["encoder"])
    frozen = mode != PolicyMode.NO_PRETRAIN
    opt = AdamW(schedule.learning_rate, weight_decay=schedule.weight_decay)
    sched = PlateauScheduler(schedule.learning_rate, schedule.plateau_patience, schedule.plateau_factor,
                             schedule.min_lr)
    stopper = EarlyStopping(schedule.early_stop_patience)
    best = net.state()
    history = []
    unfreeze_epoch = None
    phase_best = np.inf
    phase_bad = 0
    best_frozen_val = None
    ft_cache = (model.features(xt), model.features(xv)) if frozen else None

    for epoch in range(1, schedule.max_epochs + 1):
        opt.learning_rate = sched.lr
        tot = 0.0
        for idx in minibatches(rng, len(yt), schedule.batch_size):
            net.zero_grad()
            if frozen:
                feats = ft_cache[0][idx]
            else:
                feats = model.features(xt[idx], train=True)
            logits = model.head.forward(feats, True)
            loss, g = cross_entropy(logits, yt[idx])
            gf = model.head.backward(g)
            if frozen:
                opt.step(net.params(["head"]), net.grads(["head"]))
            else:
                model.encoder.backward(gf)
                opt.step(net.params(), net.grads())
            tot += loss * len(idx)
        fv = ft_cache[1] if frozen else model.features(xv)
        val_loss, _ = cross_entropy(model.head.forward(fv, False), yv)
        val_acc = float(np.mean(np.argmax(model.head.forward(fv, False), axis=1) == yv))
        history.append({"epoch": epoch, "train_loss": tot / len(yt), "val_loss": val_loss, "val_acc": val_acc,
                        "lr": opt.learning_rate, "encoder_trainable": not frozen})
        if log:
            log(history[-1])
        if stopper.step(val_loss):
            best = net.state()
        sched.step(val_loss)

        if mode == PolicyMode.LATE_LEARNING and frozen:
            if val_loss < phase_best - 1e-8:
                phase_best, phase_bad = val_loss, 0
            else:
                phase_bad += 1
            if epoch >= policy.freeze_epochs_min and phase_bad >= policy.unfreeze_plateau_patience:
                frozen = False
                ft_cache = None
                unfreeze_epoch = epoch
                best_frozen_val = phase_best
                net.load_state(best)
                stopper.reset_patience()
                sched.reset()
                continue
        if stopper.should_stop:
            break

    net.load_state(best)
    report = {
        "mode": mode.value,
        "n_train": int(len(tr_idx)),
        "n_val": int(len(va_idx)),
        "best_epoch": stopper.best_epoch,
        "best_val_loss": stopper.best,
        "epochs_run": len(history),
        "unfreeze_epoch": unfreeze_epoch,
        "best_frozen_val_loss": best_frozen_val,
        "encoder_digest_before": encoder_digest0,
        "encoder_digest_after": net.digest(["encoder"]),
        "history": history,
    }
    return model, report


EncoderProvider = Callable[[int], Optional[Sequential]]


@dataclass
class LoocvConfig:
    policy: FinetunePolicy = field(default_factory=FinetunePolicy)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    seeds: tuple = (0, 1, 2, 3, 4)
    embedding_dim: int = 256
    data_fraction: float = 1.0
    base_seed: Optional[int] = None

    def rng(self, seed: int, label: str) -> np.random.Generator:
        # run seeds are namespaced under the pipeline seed when one is set
        if self.base_seed is None:
            return stage_rng(seed, label)
        return stage_rng(self.base_seed, f"run{seed}/{label}")


def stratified_subsample(rng: np.random.Generator, y: np.ndarray, fraction: float, n_classes: int) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.arange(len(y))
    keep = []
    for c in range(n_classes):
        idx = np.flatnonzero(y == c)
        k = int(round(len(idx) * fraction))
        if k == 0:
            raise MissingClassError(f"fraction {fraction} leaves class {c} empty")
        keep.append(np.sort(rng.choice(idx, k, replace=False)))
    return np.sort(np.concatenate(keep))


def loocv_folds(users: np.ndarray):
    """(user, train_idx, test_idx) per distinct user, in sorted user order."""
    uniq = sorted(set(users.tolist()))
    for u in uniq:
        test = np.flatnonzero(users == u)
        train = np.flatnonzero(users != u)
        yield u, train, test


def loocv(data: LabeledWindows, n_classes: int, cfg: LoocvConfig, encoder_provider: Optional[EncoderProvider] = None,
          user_ids=None, extra_train: Optional[LabeledWindows] = None, log=None) -> dict:
    """Leave-one-user-out evaluation repeated once per seed.

    ``encoder_provider(seed)`` returns the pretrained encoder for a run (it is
    not called for ``no_pretrain``). ``user_ids`` lists every expected user;
    a user without windows is an error. ``extra_train`` (e.g. labelled
    simulated windows) is appended to every fold's training set and never
    tested on.
    """
    uniq = sorted(set(data.users.tolist()))
    if user_ids is not None:
        empty = sorted(set(user_ids) - set(uniq), key=str)
        if empty:
            raise ValueError(f"users with no data: {empty}")
    if len(uniq) < 2:
        raise ValueError("leave-one-user-out needs at least 2 users")
    rows = []
    for seed in cfg.seeds:
        enc = None
        if cfg.policy.mode != PolicyMode.NO_PRETRAIN:
            if encoder_provider is None:
                raise ValueError(f"policy {cfg.policy.mode.value!r} needs an encoder provider")
            enc = encoder_provider(seed)
        for user, tr, te in loocv_folds(data.users):
            train = data.subset(tr)
            if cfg.data_fraction < 1.0:
                keep = stratified_subsample(cfg.rng(seed, f"fraction/{user}"), train.y, cfg.data_fraction,
                                            n_classes)
                train = train.subset(keep)
            if extra_train is not None:
                train = LabeledWindows.concat([train, extra_train])
            model, rep = finetune(enc, train, n_classes, cfg.policy, cfg.schedule.replace(rng_seed=seed),
                                  cfg.rng(seed, f"finetune/{user}"), cfg.embedding_dim)
            preds, _ = predict(model, data.x[te])
            m = metrics(preds, data.y[te], n_classes)
            row = {"seed": int(seed), "test_user": _plain(user), "n_train": int(len(train)), "n_test": int(len(te)),
                   "accuracy": m["accuracy"], "macro_f1": m["macro_f1"], "confusion": m["confusion"],
                   "best_epoch": rep["best_epoch"], "epochs_run": rep["epochs_run"],
                   "unfreeze_epoch": rep["unfreeze_epoch"],
                   "test_indices_digest": _index_digest(te)}
            rows.append(row)
            if log:
                log(row)
    out = summarize(rows, cfg, uniq, data)
    out["extra_train"] = 0 if extra_train is None else int(len(extra_train))
    return out


def _plain(v):
    return v.item() if hasattr(v, "item") else v


def _index_digest(idx) -> str:
    import hashlib

    return hashlib.sha256(np.asarray(idx, dtype=np.int64).tobytes()).hexdigest()[:16]


def summarize(rows: list, cfg: LoocvConfig, users: list, data: LabeledWindows) -> dict:
    f1 = np.array([r["macro_f1"] for r in rows])
    acc = np.array([r["accuracy"] for r in rows])
    per_run = {}
    for r in rows:
        per_run.setdefault(r["seed"], []).append(r)
    run_f1 = np.array([np.mean([r["macro_f1"] for r in rs]) for rs in per_run.values()])
    run_acc = np.array([np.mean([r["accuracy"] for r in rs]) for rs in per_run.values()])
    return {
        "mode": cfg.policy.mode.value,
        "policy": {k: (v.value if isinstance(v, Enum) else v) for k, v in asdict(cfg.policy).items()},
        "schedule": cfg.schedule.to_dict(),
        "seeds": [int(s) for s in cfg.seeds],
        "data_fraction": cfg.data_fraction,
        "users": [_plain(u) for u in users],
        "fold_count": len(users),
        "n_windows": int(len(data)),
        "folds": rows,
        "macro_f1_mean": float(f1.mean()),
        "macro_f1_std": float(f1.std()),
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "run_macro_f1_mean": float(run_f1.mean()),
        "run_macro_f1_std": float(run_f1.std()),
        "run_accuracy_mean": float(run_acc.mean()),
        "run_accuracy_std": float(run_acc.std()),
    }


FOLD_COLUMNS = ("mode", "data_fraction", "seed", "test_user", "n_train", "n_test", "accuracy", "macro_f1",
                "best_epoch", "epochs_run", "unfreeze_epoch")


def fold_rows(report: dict) -> list:
    """Flat per-fold, per-run rows for plotting."""
    return [{"mode": report["mode"], "data_fraction": report["data_fraction"],
             **{k: r[k] for k in FOLD_COLUMNS[2:]}} for r in report["folds"]]


def write_fold_csv(path, reports) -> None:
    import csv

    if isinstance(reports, dict):
        reports = [reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=FOLD_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in fold_rows(rep):
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def check_partition(report: dict, data: LabeledWindows) -> None:
    """Every window in exactly one test set per run; no user on both sides of a fold."""
    for seed in report["seeds"]:
        rows = [r for r in report["folds"] if r["seed"] == seed]
        covered = np.zeros(len(data), dtype=np.int64)
        for r in rows:
            te = np.flatnonzero(data.users == r["test_user"])
            if _index_digest(te) != r["test_indices_digest"]:
                raise AssertionError(f"fold for user {r['test_user']} tested on unexpected windows")
            covered[te] += 1
            if set(np.unique(data.users[te]).tolist()) != {r["test_user"]}:
                raise AssertionError("test set mixes users")
        if not np.all(covered == 1):
            raise AssertionError("windows not covered exactly once by the test sets")


def sweep_embedding_dim(dims, run: Callable[[int], dict]) -> list:
    """``run(dim)`` performs pretrain + evaluation and returns a LOOCV report."""
    dims = list(dims)
    if not dims:
        raise ValueError("embedding-dimension sweep needs at least one size")
    rows = []
    for d in dims:
        rep = run(int(d))
        rows.append({"embedding_dim": int(d), "macro_f1_mean": rep["macro_f1_mean"],
                     "macro_f1_std": rep["macro_f1_std"], "accuracy_mean": rep["accuracy_mean"], "report": rep})
    return rows


def sweep_data_fraction(fractions, run: Callable[[float, PolicyMode], dict],
                        modes=(PolicyMode.NO_PRETRAIN, PolicyMode.FROZEN, PolicyMode.LATE_LEARNING)) -> list:
    """``run(fraction, mode)`` returns a LOOCV report; one row per (mode, fraction)."""
    fractions = list(fractions)
    if not fractions:
        raise ValueError("data-fraction sweep needs at least one fraction")
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {f}")
    rows = []
    for mode in modes:
        for f in fractions:
            rep = run(float(f), PolicyMode(mode))
            rows.append({"mode": PolicyMode(mode).value, "fraction": float(f), "macro_f1_mean": rep["macro_f1_mean"],
                         "macro_f1_std": rep["macro_f1_std"], "accuracy_mean": rep["accuracy_mean"],
                         "report": rep})
    return rows
