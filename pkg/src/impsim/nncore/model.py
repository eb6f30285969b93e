from __future__ import annotations

import hashlib

import numpy as np

from .layers import Sequential


class Model:
    """A named collection of Sequential blocks sharing one parameter namespace."""

    def __init__(self, blocks: dict):
        self.blocks = dict(blocks)

    def params(self, only=None) -> dict:
        out = {}
        for key, block in self.blocks.items():
            if only is None or key in only:
                out.update(block.named_params(f"{key}/"))
        return out

    def grads(self, only=None) -> dict:
        out = {}
        for key, block in self.blocks.items():
            if only is None or key in only:
                out.update(block.named_grads(f"{key}/"))
        return out

    def buffers(self) -> dict:
        out = {}
        for key, block in self.blocks.items():
            out.update(block.named_buffers(f"{key}/"))
        return out

    def zero_grad(self) -> None:
        for block in self.blocks.values():
            block.zero_grad()

    def state(self) -> dict:
        """Copy of every parameter and buffer."""
        out = {k: v.copy() for k, v in self.params().items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, arrays: dict) -> None:
        for key, block in self.blocks.items():
            block.load_arrays(arrays, f"{key}/")

    def digest(self, only=None) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.params(only).items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def specs(self) -> dict:
        return {k: b.specs() for k, b in self.blocks.items()}

    def set_rng(self, rng) -> None:
        for block in self.blocks.values():
            block.set_rng(rng)

    @classmethod
    def from_specs(cls, specs: dict, rng) -> "Model":
        return cls({k: Sequential.from_specs(v, rng) for k, v in specs.items()})
