"""Run configuration: one JSON file, dotted-path overrides, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ConfigInvalid
from .features import FEATURE_DIM, MAT_SLICE, OAT_SLICE, TEXT_SLICE, TOPO_SLICE, TextEmbedderSpec
from .model import ModelConfig
from .node2vec import Node2vecConfig
from .synth import SynthConfig
from .training import TrainConfig

MODALITIES = {"MAT": MAT_SLICE, "OAT": OAT_SLICE, "NLT": TEXT_SLICE, "TR": TOPO_SLICE}


@dataclass
class FeatureOptions:
    standardize: bool = False
    keep_unverified: bool = False
    match_names: bool = True
    modalities: List[str] = field(default_factory=lambda: ["MAT", "OAT", "NLT", "TR"])

    def mask(self) -> np.ndarray:
        m = np.zeros(FEATURE_DIM, dtype=bool)
        for name in self.modalities:
            if name not in MODALITIES:
                raise ConfigInvalid(f"unknown feature modality {name!r}; expected one of {sorted(MODALITIES)}")
            m[MODALITIES[name]] = True
        return m


@dataclass
class MetapathSelection:
    orders: Optional[List[int]] = None
    ids: Optional[List[str]] = None
    path: Optional[str] = None


@dataclass
class SplitOptions:
    ratios: List[float] = field(default_factory=lambda: [8, 1, 1])
    seed: Optional[int] = None


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    threads: Optional[int] = None
    features: FeatureOptions = field(default_factory=FeatureOptions)
    text_embedder: TextEmbedderSpec = field(default_factory=TextEmbedderSpec)
    node2vec: Node2vecConfig = field(default_factory=Node2vecConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metapaths: MetapathSelection = field(default_factory=MetapathSelection)
    split: SplitOptions = field(default_factory=SplitOptions)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def split_seed(self) -> int:
        return self.seed if self.split.seed is None else self.split.seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path, overrides: Optional[Dict[str, str]] = None) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text("utf-8")) if path else {}
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
        for key, raw in (overrides or {}).items():
            apply_override(data, key, raw)
        cfg = cls.from_dict(data)
        cfg.propagate_seed(data)
        return cfg

    def propagate_seed(self, data: dict) -> None:
        """Sub-configs without an explicit seed follow the top-level seed."""
        for section in ("node2vec", "train", "synth"):
            if "seed" not in (data.get(section) or {}):
                getattr(self, section).seed = self.seed
        if "projection_seed" not in (data.get("text_embedder") or {}):
            self.text_embedder.projection_seed = self.seed


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{prefix or 'config'} must be an object")
    if cls is SynthConfig:
        return SynthConfig.from_dict(data)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigInvalid(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in fields else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid {prefix.rstrip('.') or 'config'}: {exc}") from None
    return obj


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(data: dict, dotted: str, raw: str) -> None:
    """Set ``data[a][b]... = value`` for ``dotted == 'a.b...'``; values parse as JSON when possible."""
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigInvalid(f"override {dotted}: {p} is not a section")
    node[parts[-1]] = parse_value(raw) if isinstance(raw, str) else raw
