"""Checkpoint container: one ``.npz`` file with a JSON metadata entry."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Model
from .optim import AdamW

FORMAT = "impsim-checkpoint"
VERSION = 1


def save_checkpoint(path, model: Model, meta: Optional[dict] = None, optimizer: Optional[AdamW] = None,
                    rng: Optional[np.random.Generator] = None) -> None:
    header = {"format": FORMAT, "version": VERSION, "specs": model.specs(), "meta": meta or {}}
    arrays = {f"param:{k}": v for k, v in model.state().items()}
    if optimizer is not None:
        header["optimizer"] = optimizer.state_meta()
        arrays.update({f"opt:{k}": v for k, v in optimizer.state_arrays().items()})
    if rng is not None:
        header["rng"] = rng.bit_generator.state
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(model, meta, optimizer_or_None, rng_or_None)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode("utf-8"))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not an {FORMAT} file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        params = {k[6:]: z[k] for k in z.files if k.startswith("param:")}
        opt_arrays = {k[4:]: z[k] for k in z.files if k.startswith("opt:")}
    model = Model.from_specs(header["specs"], np.random.default_rng(0))
    model.load_state(params)
    opt = AdamW.from_state(header["optimizer"], opt_arrays) if "optimizer" in header else None
    rng = None
    if "rng" in header:
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng"]
    return model, header["meta"], opt, rng
