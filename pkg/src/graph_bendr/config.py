"""Run configuration: nested dataclasses loaded from JSON with unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

SEED_ENV = "GRAPH_BENDR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    sfreq: float = 256.0
    window_s: float = 6.0


@dataclass
class EncoderSection:
    kernels: tuple[int, ...] = (3, 3, 3, 3, 3, 3)
    strides: tuple[int, ...] = (3, 2, 2, 2, 2, 2)
    feature_dim: int = 64
    groups: int = 8


@dataclass
class TransformerSection:
    layers: int = 2
    heads: int = 4
    ffn_dim: int | None = None
    dropout: float = 0.1


@dataclass
class MaskingSection:
    p_start: float = 0.05
    span: int = 10


@dataclass
class ContrastiveSection:
    negatives: int = 10
    temperature: float = 0.1


@dataclass
class HeadSection:
    kind: str = "bendr"


@dataclass
class GnnSection:
    architecture: str = "none"  # gcn | gat | sage | none
    edge_weights: bool = False
    layers: int = 2
    hidden_dim: int | None = None
    gat_heads: int = 1
    edge_dim: int = 4
    experimental: bool = False
    permute_edges_seed: int | None = None  # ablation: scramble electrode geometry


@dataclass
class AdjusterSection:
    kind: str = "linear"


@dataclass
class OptimizerSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class PretrainSection:
    steps: int = 300
    batch_size: int = 8


@dataclass
class FinetuneSection:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3


@dataclass
class SeedSection:
    seed: int = 0
    init: int | None = None
    mask: int | None = None
    sampling: int | None = None
    dropout: int | None = None

    def overrides(self) -> dict:
        return {k: v for k, v in (("init", self.init), ("mask", self.mask), ("sampling", self.sampling), ("dropout", self.dropout)) if v is not None}


@dataclass
class RunConfig:
    montage: str | None = None
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    masking: MaskingSection = field(default_factory=MaskingSection)
    contrastive: ContrastiveSection = field(default_factory=ContrastiveSection)
    head: HeadSection = field(default_factory=HeadSection)
    gnn: GnnSection = field(default_factory=GnnSection)
    adjuster: AdjusterSection = field(default_factory=AdjusterSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    seeds: SeedSection = field(default_factory=SeedSection)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def replace(self, **sections) -> "RunConfig":
        """Copy with sections patched, e.g. ``cfg.replace(gnn={"architecture": "gcn"})``."""
        doc = self.to_dict()
        for key, patch in sections.items():
            if isinstance(patch, dict):
                doc[key].update(patch)
            else:
                doc[key] = patch
        return from_dict(doc)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(tp, value, where)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_coerce(args[0], v, where) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def _build(cls, doc: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in doc.items()}
    return cls(**kwargs)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.gnn.architecture not in ("gcn", "gat", "sage", "none"):
        raise ConfigError("gnn.architecture must be gcn, gat, sage or none")
    if cfg.gnn.architecture == "sage" and cfg.gnn.edge_weights:
        raise ConfigError("gnn: GraphSAGE does not take edge weights")
    if cfg.gnn.architecture == "none" and cfg.gnn.edge_weights:
        raise ConfigError("gnn: edge weights need a GNN")
    if cfg.head.kind not in ("bendr", "linear"):
        raise ConfigError("head.kind must be bendr or linear")
    if cfg.adjuster.kind not in ("linear", "padding"):
        raise ConfigError("adjuster.kind must be linear or padding")
    if not 0 < cfg.masking.p_start < 1 or cfg.masking.span < 1:
        raise ConfigError("masking: need 0 < p_start < 1 and span >= 1")
    if cfg.contrastive.negatives < 0 or cfg.contrastive.temperature <= 0:
        raise ConfigError("contrastive: negatives >= 0 and temperature > 0 required")
    if cfg.pretrain.steps < 0 or cfg.pretrain.batch_size < 1:
        raise ConfigError("pretrain: steps >= 0 and batch_size >= 1 required")
    if cfg.finetune.epochs < 0 or cfg.finetune.batch_size < 1:
        raise ConfigError("finetune: epochs >= 0 and batch_size >= 1 required")
    if cfg.data.sfreq <= 0 or cfg.data.window_s <= 0:
        raise ConfigError("data: sfreq and window_s must be positive")
    d = cfg.encoder.feature_dim
    if d % cfg.transformer.heads:
        raise ConfigError("transformer.heads must divide encoder.feature_dim")
    if len(cfg.encoder.kernels) != 6 or len(cfg.encoder.strides) != 6:
        raise ConfigError("encoder: exactly 6 kernels and 6 strides")
    return cfg


def from_dict(doc: dict) -> RunConfig:
    return validate(_build(RunConfig, doc))


def apply_env(cfg: RunConfig, env=None) -> RunConfig:
    env = os.environ if env is None else env
    if SEED_ENV in env:
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        return cfg.replace(seeds={"seed": seed, "init": None, "mask": None, "sampling": None, "dropout": None})
    return cfg


def load_config(path=None, env=None) -> RunConfig:
    doc = {} if path is None else json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return apply_env(from_dict(doc), env)
