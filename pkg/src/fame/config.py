"""Pipeline configuration and seed derivation.

The config is a JSON document whose keys mirror the dataclasses below; any
key left out keeps its default.  Every stage draws its RNG seed from the
root seed and the stage name, so changing the root seed changes every stage
and fixing it reproduces a run exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np


@dataclass
class DataConfig:
    path: str | None = None
    format: str = "loghub_labeled"
    offline_fraction: float = 0.85


@dataclass
class DrainSettings:
    similarity_threshold: float = 0.5
    tree_depth: int = 4
    max_children: int = 100


@dataclass
class BackboneSettings:
    dim: int = 2**18
    adapt_cap: int = 200_000


@dataclass
class TrainingSettings:
    gamma: float = 2.0
    alpha: float = 0.75
    learning_rate: float = 64.0
    batch_size: int = 256


@dataclass
class PartitionSettings:
    mode: str = "tfidf"  # or "import"
    path: str | None = None
    link_threshold: float = 0.5
    distinctness_threshold: float = 0.7
    pool_sample: int = 10_000


@dataclass
class RouterSettings:
    subsample_ratio: float = 3.0
    val_fraction: float = 0.1
    gate_threshold: float = 0.5
    gate_recall_target: float = 0.95
    selector_accuracy_target: float = 0.80
    selector_patience: int = 1
    max_epochs: int = 20


@dataclass
class ExpertSettings:
    mixed_negative_cap: float = 20.0
    universal_negative_cap: float = 10.0
    small_dataset_lines: int = 4_000
    fixed_steps: int = 500
    check_every: int = 50
    patience: int = 3
    max_epochs: int = 20
    val_fraction: float = 0.1


@dataclass
class CalibrationSettings:
    recall_floor: float = 0.90
    n_percentiles: int = 1_000
    fusion_grid: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0])


@dataclass
class PipelineConfig:
    seed: int = 0
    k: int = 100
    output_dir: str = "fame_out"
    data: DataConfig = field(default_factory=DataConfig)
    drain: DrainSettings = field(default_factory=DrainSettings)
    backbone: BackboneSettings = field(default_factory=BackboneSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    partition: PartitionSettings = field(default_factory=PartitionSettings)
    router: RouterSettings = field(default_factory=RouterSettings)
    experts: ExpertSettings = field(default_factory=ExpertSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def config_hash(self) -> str:
        """sha256 over the run-determining keys (output_dir excluded)."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def replace(self, **changes) -> PipelineConfig:
        return dataclasses.replace(self, **changes)


class ConfigError(ValueError):
    pass


def stage_seed(root: int, stage: str) -> int:
    """32-bit seed from SeedSequence([root, crc32(stage)])."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1)[0])


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in doc.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + key!r}")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> PipelineConfig:
    return _build(PipelineConfig, doc, "")


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    return config_from_dict(doc)
