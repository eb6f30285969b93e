"""Finite-difference gradient table over every layer kind and loss."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..nncore import (GELU, BatchNorm, Conv1d, Dense, Dropout, Flatten, MaxPool1d, ReLU, Reshape, check_function,
                      check_layer, cross_entropy, mse)
from ..nncore.training import stage_rng
from ..simpharnet import info_nce

TOLERANCE = 1e-4


def _layer_cases(rng):
    return [
        ("dense", lambda: Dense(6, 4, rng), (5, 6)),
        ("conv1d", lambda: Conv1d(3, 4, 3, 1, rng), (2, 3, 9)),
        ("conv1d_stride2", lambda: Conv1d(2, 3, 4, 2, rng), (2, 2, 11)),
        ("batchnorm_2d", lambda: BatchNorm(5), (8, 5)),
        ("batchnorm_3d", lambda: BatchNorm(3), (4, 3, 6)),
        ("dropout", lambda: Dropout(0.3, rng), (4, 7)),
        ("gelu", GELU, (4, 6)),
        ("relu", ReLU, (4, 6)),
        ("maxpool1d", lambda: MaxPool1d(2), (2, 3, 8)),
        ("maxpool1d_global", lambda: MaxPool1d(None), (2, 3, 7)),
        ("flatten", Flatten, (2, 3, 4)),
        ("reshape", lambda: Reshape((2, 6)), (3, 12)),
    ]


def _warm_batchnorm(layer, shape, rng):
    # give the running statistics non-trivial values before the eval-mode check
    for _ in range(3):
        layer.forward(rng.normal(size=shape), True)


def gradcheck_table(seed: int = 0, corrupt: Optional[str] = None, tol: float = TOLERANCE) -> list:
    """Rows of ``{name, mode, target, rel_error, passed}``.

    ``corrupt`` names a row (e.g. ``"dense"`` or ``"info_nce"``) whose
    analytic gradient is deliberately perturbed; it must then fail.
    """
    rng = stage_rng(seed, "gradcheck")
    rows = []
    for name, make, shape in _layer_cases(rng):
        for train in (True, False):
            layer = make()
            if isinstance(layer, BatchNorm) and not train:
                _warm_batchnorm(layer, shape, rng)
            x = rng.normal(size=shape)
            res = check_layer(layer, x, rng, train=train, corrupt=(corrupt == name))
            for target, err in res.items():
                rows.append({"name": name, "mode": "train" if train else "eval", "target": target,
                             "rel_error": err, "passed": err <= tol})

    pred, target = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    logits, labels = rng.normal(size=(7, 4)), rng.integers(0, 4, size=7)
    q, k = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    losses = [
        ("mse", lambda p: mse(p, target), [pred]),
        ("cross_entropy", lambda z: cross_entropy(z, labels), [logits]),
        ("info_nce", lambda a, b: info_nce(a, b), [q, k]),
        ("info_nce_t0.5", lambda a, b: info_nce(a, b, temperature=0.5), [q, k]),
    ]
    for name, fn, inputs in losses:
        res = check_function(fn, inputs, rng, corrupt=(corrupt == name))
        for tgt, err in res.items():
            rows.append({"name": name, "mode": "loss", "target": tgt, "rel_error": err, "passed": err <= tol})
    return rows


def format_table(rows: list) -> str:
    lines = [f"{'check':<20} {'mode':<6} {'target':<8} {'rel_error':>10}  result"]
    for r in rows:
        lines.append(f"{r['name']:<20} {r['mode']:<6} {r['target']:<8} {r['rel_error']:>10.2e}  "
                     f"{'PASS' if r['passed'] else 'FAIL'}")
    return "\n".join(lines)
