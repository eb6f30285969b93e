"""Pipeline configuration: one JSON document, overridable from the CLI."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

from ..downstream import FinetunePolicy, PolicyMode
from ..nncore import TrainSchedule
from ..relax import RelaxConfig
from ..signal import WindowSpec
from ..simpharnet import PretrainConfig

SEED_ENV = "IMPSIM_SEED"


@dataclass(frozen=True)
class GroundingConfig:
    window: int = 60
    train_stride: int = 5
    val_fraction: float = 0.1
    search_lag: bool = True
    schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(max_epochs=40))

    def __post_init__(self):
        if self.window < 2 or self.train_stride < 1:
            raise ValueError("grounding window must be >= 2 and stride >= 1")


@dataclass(frozen=True)
class HarConfig:
    rate: float = 20.0
    window: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("HAR rate must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs/default"
    sim_rate: Optional[float] = None
    relax: RelaxConfig = field(default_factory=lambda: RelaxConfig(surface_radius=0.01))
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    har: HarConfig = field(default_factory=HarConfig)
    pretrain: PretrainConfig = field(default_factory=lambda: PretrainConfig(steps_per_epoch=40))
    # paper patience/learning-rate values; epoch caps keep the desk-scale run short
    pretrain_schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(max_epochs=30))
    finetune_schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(max_epochs=100, batch_size=32))
    embedding_dim: int = 256
    policy: FinetunePolicy = field(default_factory=FinetunePolicy)
    val_fraction: float = 0.1
    mix_sim: bool = False
    sweep_dims: tuple = (16, 64, 256)
    sweep_fractions: tuple = (0.2, 0.6, 1.0)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.sim_rate is not None and not self.sim_rate > 0:
            raise ValueError("sim_rate must be positive")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        return canonical_digest(self.to_dict())

    def pretrain_config(self, embedding_dim: Optional[int] = None) -> PretrainConfig:
        d = asdict(self.pretrain)
        d["embedding_dim"] = embedding_dim or self.embedding_dim
        return PretrainConfig(**d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, PolicyMode):
        return x.value
    return x


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, default=_json_default)


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def canonical_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def _build(cls, data, base=None):
    """Instantiate ``cls`` from ``data``; absent keys keep the values of ``base``."""
    if not isinstance(data, dict):
        raise ValueError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    base = cls() if base is None else base
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {unknown}")
    kw = {name: getattr(base, name) for name in known}
    for name, value in data.items():
        current = kw[name]
        if is_dataclass(current):
            kw[name] = _build(type(current), value, current)
        elif isinstance(current, tuple) and isinstance(value, list):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    return cls(**kw)


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data)


def set_path(data: dict, dotted: str, value) -> dict:
    """Return a copy of ``data`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(data)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"config key {dotted!r} descends into a non-object")
    node[keys[-1]] = value
    return out


def parse_override(item: str):
    if "=" not in item:
        raise ValueError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=(), seed: Optional[int] = None, out_dir: Optional[str] = None,
                environ=None) -> PipelineConfig:
    """File, then ``key=value`` overrides, then ``IMPSIM_SEED``, then explicit flags."""
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    for item in overrides:
        k, v = parse_override(item)
        data = set_path(data, k, v)
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV):
        data["seed"] = int(env[SEED_ENV])
    if seed is not None:
        data["seed"] = int(seed)
    if out_dir is not None:
        data["out_dir"] = str(out_dir)
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
