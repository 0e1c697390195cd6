"""Pipeline configuration: a dataclass tree with JSON round-trip, dotted-path
overrides (``cnn.epochs=40``) and per-stage seed derivation.

All randomness flows from the single root seed: the generator seed of stage
``s`` in fold ``f`` is the first 4 bytes (little-endian) of
``sha256(b"<root_seed>:<f>:<s>")``. The fold plan itself uses the root seed
directly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .dataset import FORMATS, TABULAR
from .embedding import EmbeddingConfig
from .gbdt import GBDTConfig
from .nn import CNNConfig


@dataclass
class ClusterConfig:
    counts: tuple[int, ...] = (38, 28, 18)
    restarts: int = 5
    max_iter: int = 100


@dataclass
class PipelineConfig:
    dataset: str = ""
    format: str = TABULAR
    out: str = ""
    seed: int = 0
    folds: int = 10
    normalize: bool = True
    input_policy: str = "auto"
    quantile: float = 0.95
    nms: bool = True
    threshold_pool: str = "unmasked"
    segment_length: int = 10
    cnn: CNNConfig = field(default_factory=CNNConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    gbdt: GBDTConfig = field(default_factory=GBDTConfig)

    def validate(self) -> None:
        if not self.dataset:
            raise ValueError("dataset path is required")
        if self.format not in FORMATS:
            raise ValueError(f"unknown dataset format {self.format!r}")
        if not self.out:
            raise ValueError("output directory is required")
        if self.folds < 3:
            raise ValueError("folds must be >= 3")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must be in (0, 1)")
        if self.segment_length < 1:
            raise ValueError("segment_length must be >= 1")
        if self.input_policy not in ("auto", "full-powerset", "capped"):
            raise ValueError(f"unknown input policy {self.input_policy!r}")
        if self.threshold_pool not in ("unmasked", "input-set"):
            raise ValueError(f"unknown threshold pool {self.threshold_pool!r}")
        self.cnn.validate()
        self.embedding.validate()
        self.gbdt.validate()
        if len(self.cluster.counts) != len(self.cnn.conv_layers):
            raise ValueError(
                f"{len(self.cluster.counts)} cluster counts for "
                f"{len(self.cnn.conv_layers)} conv layers"
            )
        if any(c < 1 for c in self.cluster.counts):
            raise ValueError("cluster counts must be >= 1")


STAGES = (
    "checkpoint",
    "thresholds",
    "mhaps",
    "clusters",
    "graph",
    "embeddings",
    "features",
    "gbdt",
    "metrics",
)


def stage_seed(root_seed: int, fold: int, stage: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{fold}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def to_dict(cfg) -> dict:
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def _retuple(value):
    if isinstance(value, list):
        return tuple(_retuple(v) for v in value)
    return value


def from_dict(data: dict) -> PipelineConfig:
    def build(cls, sub: dict):
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in sub.items():
            if key not in known:
                raise ValueError(f"unknown config field {key!r} for {cls.__name__}")
            if key in _SUBCONFIGS:
                kwargs[key] = build(_SUBCONFIGS[key], value)
            else:
                kwargs[key] = _retuple(value)
        return cls(**kwargs)

    return build(PipelineConfig, data)


_SUBCONFIGS = {
    "cnn": CNNConfig,
    "cluster": ClusterConfig,
    "embedding": EmbeddingConfig,
    "gbdt": GBDTConfig,
}


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return from_dict(json.load(fh))


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def canonical_json(cfg: PipelineConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def iter_field_paths(cfg=None, prefix: str = ""):
    """(dotted path, current value) pairs over the whole config tree."""
    if cfg is None:
        cfg = PipelineConfig()
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        path = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from iter_field_paths(value, prefix=f"{path}.")
        else:
            yield path, value


def _parse_like(current, text: str):
    """Parse a CLI string according to the type of the current field value."""
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        if current and isinstance(current[0], tuple):
            # conv layer spec like "32x8,64x5,128x3"
            layers = []
            for part in text.split(","):
                f_, k = part.lower().split("x")
                layers.append((int(f_), int(k)))
            return tuple(layers)
        return tuple(int(x) for x in text.split(","))
    return text


def set_by_path(cfg: PipelineConfig, path: str, text: str) -> None:
    """Override one field by dotted path, e.g. ("cnn.epochs", "40")."""
    parts = path.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise ValueError(f"unknown config path {path!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if not hasattr(target, leaf):
        raise ValueError(f"unknown config path {path!r}")
    setattr(target, leaf, _parse_like(getattr(target, leaf), text))
