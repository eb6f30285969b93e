"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .layers import Dropout, Layer

H = 1e-5
ABS_FLOOR = 1e-6


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H, index=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place).

    ``index`` limits the probe to a subset of flat positions; other entries
    of the result are left at zero.
    """
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _probe(rng: np.random.Generator, size: int, max_probes: Optional[int]):
    if max_probes is None or size <= max_probes:
        return None, np.arange(size)
    idx = np.sort(rng.choice(size, max_probes, replace=False))
    return idx, idx


def check_layer(layer: Layer, x: np.ndarray, rng: np.random.Generator, train: bool = True,
                max_probes: Optional[int] = 40, corrupt: bool = False) -> dict:
    """Max relative error per parameter and for the input gradient.

    Dropout layers are re-seeded before each forward so the mask is fixed.
    ``corrupt`` perturbs the analytic gradients (negative control).
    """
    x = np.array(x, dtype=np.float64)
    seed = int(rng.integers(2 ** 31))

    def run(inp):
        if isinstance(layer, Dropout):
            layer.rng = np.random.default_rng(seed)
        return layer.forward(inp, train)

    out = run(x)
    upstream = rng.normal(size=out.shape)
    layer.zero_grad()
    dx = layer.backward(upstream)

    def f():
        return float(np.sum(run(x) * upstream))

    results = {}
    targets = [("input", x, dx)] + [(k, layer.params[k], layer.grads[k].copy()) for k in layer.params]
    for name, arr, analytic in targets:
        index, pos = _probe(rng, arr.size, max_probes)
        num = numeric_grad(f, arr, index=index)
        a = analytic.reshape(-1)[pos]
        if corrupt:
            a = a * 1.1 + 1e-3
        results[name] = rel_error(a, num.reshape(-1)[pos])
    return results


def check_function(fn: Callable, inputs: list, rng: np.random.Generator, max_probes: Optional[int] = 60,
                   corrupt: bool = False) -> dict:
    """``fn(*inputs) -> (loss, grads_tuple)``; checks each gradient entry w.r.t. its input."""
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    _, grads = fn(*inputs)
    if not isinstance(grads, (tuple, list)):
        grads = (grads,)
    results = {}
    for i, (arr, g) in enumerate(zip(inputs, grads)):
        if g is None:
            continue
        index, pos = _probe(rng, arr.size, max_probes)
        num = numeric_grad(lambda: float(fn(*inputs)[0]), arr, index=index)
        a = np.asarray(g).reshape(-1)[pos]
        if corrupt:
            a = a * 1.1 + 1e-3
        results[f"arg{i}"] = rel_error(a, num.reshape(-1)[pos])
    return results
