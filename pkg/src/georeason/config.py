"""Run configuration shared by the CLI subcommands."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass
class RunConfig:
    seed: int = 0

    # encoder
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 256
    max_seq_len: int = 128
    vocab_size: int = 10000

    # spatial context
    n_neighbors: int = 20
    coord_scale: float = 1.0
    max_sentences: int = 3

    # pretraining
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-3
    temperature: float = 0.07
    candidate_mode: str = "simclr"
    mask_rate: float = 0.15
    mlm_weight: float = 1.0
    hard_negative_radius_km: float = 10.0

    # fine-tuning
    finetune_steps: int = 200
    finetune_lr: float = 1e-3
    finetune_batch_size: int = 8
    head_only: bool = False
    train_fraction: float = 0.8

    # retrieval
    k: int = 10

    # ablation switches (component names, see pretrain.Ablations)
    ablate: tuple = ()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablate"] = list(self.ablate)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "ablate" in data:
            data = {**data, "ablate": tuple(data["ablate"])}
        return cls(**data)

    def override(self, **kwargs) -> "RunConfig":
        """A copy with the given non-None fields replaced."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        if "ablate" in updates:
            updates["ablate"] = tuple(updates["ablate"])
        return dataclasses.replace(self, **updates)
