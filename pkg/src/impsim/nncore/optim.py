from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import ShapeError


@dataclass
class AdamW:
    """AdamW with decoupled weight decay and per-parameter step counts."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place; keys select which tensors move."""
        lr, b1, b2 = self.learning_rate, self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"adamw: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            # in place: these tensors are large and the step runs every batch
            m *= b1
            m += (1 - b1) * g
            tmp = np.multiply(g, g)
            tmp *= 1 - b2
            v *= b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp /= math.sqrt(1 - b2 ** t)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr / (1 - b1 ** t)
            if self.weight_decay:
                p *= 1 - lr * self.weight_decay
            p -= tmp

    def state_arrays(self) -> dict:
        out = {}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def state_meta(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "t": dict(self.t)}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "AdamW":
        opt = cls(meta["learning_rate"], meta["beta1"], meta["beta2"], meta["eps"], meta["weight_decay"])
        for name, t in meta["t"].items():
            opt.t[name] = int(t)
            opt.m[name] = np.array(arrays[f"m/{name}"])
            opt.v[name] = np.array(arrays[f"v/{name}"])
        return opt


def adamw_step(state: AdamW, params: dict, grads: dict) -> dict:
    state.step(params, grads)
    return params
