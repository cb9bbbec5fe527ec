"""Run configuration: one JSON file with per-stage sections and a global seed."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .autoencoder import DiffAEConfig
from .classifier import ClassifierConfig
from .io_utils import read_json, sha256_json
from .maskgen import MaskgenConfig
from .phantom import PhantomConfig
from .segnet import SegConfig


@dataclass
class SweepConfig:
    alphas: tuple = (2.0, 4.0, 8.0, 12.0, 16.0)
    n_negatives: int = 32
    n_real_fibrotic: int = 64


@dataclass
class PairsConfig:
    count: int = 120
    alpha: float | None = None  # None: use the sweep winner
    normalize_gradient: bool = True


@dataclass
class EvaluateConfig:
    threshold: float = 0.5
    ablation_pairs: int = 60


@dataclass
class RunConfig:
    seed: int = 0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    diffae: DiffAEConfig = field(default_factory=DiffAEConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    pairs: PairsConfig = field(default_factory=PairsConfig)
    maskgen: MaskgenConfig = field(default_factory=MaskgenConfig)
    segnet: SegConfig = field(default_factory=SegConfig)
    segnet_folds: int = 5
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        # tuples serialize as lists; normalize for stable hashing
        return _listify(d)

    def config_hash(self) -> str:
        return sha256_json(self.to_dict())

    def stage_seed(self, stage: str) -> int:
        h = hashlib.sha256(f"{self.seed}:{stage}".encode()).hexdigest()
        return int(h[:8], 16) % (2 ** 31)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


_SECTIONS = {
    "phantom": PhantomConfig,
    "diffae": DiffAEConfig,
    "classifier": ClassifierConfig,
    "sweep": SweepConfig,
    "pairs": PairsConfig,
    "maskgen": MaskgenConfig,
    "segnet": SegConfig,
    "evaluate": EvaluateConfig,
}


def load_config(path: str | Path) -> RunConfig:
    """Read a JSON config file; absent sections and keys keep their defaults."""
    data = read_json(path)
    kwargs = {}
    for key, val in data.items():
        if key in _SECTIONS:
            sub = _SECTIONS[key](**{k: _jsonfix(_SECTIONS[key], k, v) for k, v in val.items()})
            kwargs[key] = sub
        elif key in ("seed", "segnet_folds"):
            kwargs[key] = int(val)
        else:
            raise ValueError(f"unknown config section: {key}")
    return RunConfig(**kwargs)


def _jsonfix(cls, key, value):
    # JSON has no tuples; restore them where the dataclass default is a tuple
    default = next(f for f in fields(cls) if f.name == key)
    if isinstance(getattr(cls(), key, None), tuple) and isinstance(value, list):
        return tuple(value)
    return value
