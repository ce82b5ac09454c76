"""Run configuration: dataclass, dataset presets, JSON round-trip."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

ABLATIONS = ("full", "wo_G", "wo_A", "wo_D")


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 0.001
    max_seq_len: int = 50
    dropout_rate: float = 0.4
    n_transformer_layers: int = 2
    n_heads: int = 1
    n_graph_layers: int = 2
    graph_dropout_rate: float = 0.4
    embed_dim: int = 64
    k_pop: float = 0.5
    k_subj: float = 0.5
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    ablation: str = "full"
    # model flags
    causal_mask: bool = True
    ffn_residual: bool = True
    mask_padding: bool = False
    fusion_triple_sum: bool = False
    score_against_graph_embeddings: bool = False
    per_position_targets: bool = False
    filter_seen: bool = False
    # corpus rules
    min_len: int = 5
    max_keep: int | None = None

    def validate(self) -> "TrainConfig":
        counts = {
            "batch_size": self.batch_size,
            "max_seq_len": self.max_seq_len,
            "n_transformer_layers": self.n_transformer_layers,
            "n_heads": self.n_heads,
            "n_graph_layers": self.n_graph_layers,
            "embed_dim": self.embed_dim,
            "patience": self.patience,
            "max_epochs": self.max_epochs,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        for name, rate in (("dropout_rate", self.dropout_rate), ("graph_dropout_rate", self.graph_dropout_rate)):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must be divisible by n_heads {self.n_heads}"
            )
        for name, k in (("k_pop", self.k_pop), ("k_subj", self.k_subj)):
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {k}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.per_position_targets:
            raise ValueError(
                "per_position_targets=True is not supported: per-position labels do "
                "not compose with the per-user tri-view fusion head"
            )
        return self


# Dataset presets (batch 512, lr 0.001, L=50 are common to all three).
PRESETS = {
    "beauty": dict(dropout_rate=0.4, n_transformer_layers=2, n_heads=1,
                   n_graph_layers=2, graph_dropout_rate=0.4),
    "sports": dict(dropout_rate=0.4, n_transformer_layers=2, n_heads=1,
                   n_graph_layers=2, graph_dropout_rate=0.5),
    "ml20m": dict(dropout_rate=0.1, n_transformer_layers=4, n_heads=8,
                  n_graph_layers=4, graph_dropout_rate=0.3, max_keep=50),
}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    merged = dict(PRESETS[name])
    merged.update(overrides)
    return TrainConfig(**merged).validate()


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**data).validate()


def save_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path) -> TrainConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
