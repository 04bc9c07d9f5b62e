"""Run configuration: strict JSON schema, presets, and builders.

A run config is one JSON document with fixed sections. Validation is strict:
unknown keys anywhere are rejected, so a typo fails loudly instead of
silently falling back to a default.

The "paper" preset records the reference operating point of the original
system (K=40 queries, batch 64, stage learning rates 8e-6 / 4e-6); it is far
too slow to train on a desk machine and exists as documentation. The "toy"
preset is the desk-scale configuration the acceptance harness runs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError
from .model import ABLATIONS, GamsiModel
from .training import TrainConfig

PRECISIONS = ("f32", "f64")


@dataclass(frozen=True)
class HeadsConfig:
    k_v: int = 4
    d_e: int = 16
    grounding_heads: int = 1

    def __post_init__(self):
        for name in ("k_v", "d_e", "grounding_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"heads.{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class DataConfig:
    stage1_count: int = 2000
    stage2_count: int = 2000
    eval_count: int = 500
    base_seed: int = 1234
    expert_seed: int = 7

    def __post_init__(self):
        for name in ("stage1_count", "stage2_count", "eval_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"data.{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class PathsConfig:
    workdir: str = "."


@dataclass
class RunConfig:
    model: BackboneConfig = field(default_factory=BackboneConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    train: dict[str, TrainConfig] = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    variant: str = "full"
    precision: str = "f32"
    model_seed: int = 0

    def __post_init__(self):
        if self.variant not in ABLATIONS:
            raise ConfigError(f"unknown variant {self.variant!r}, have {sorted(ABLATIONS)}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        for key, tc in self.train.items():
            if key not in ("stage1", "stage2"):
                raise ConfigError(f"train section key must be stage1/stage2, got {key!r}")
            want = int(key[-1])
            if tc.stage != want:
                raise ConfigError(f"train.{key} declares stage {tc.stage}")

    def stage_config(self, stage: int) -> TrainConfig:
        key = f"stage{stage}"
        if key not in self.train:
            raise ConfigError(f"config has no train.{key} section")
        return self.train[key]

    def build_model(self) -> GamsiModel:
        import numpy as np

        return GamsiModel(
            self.model,
            d_e=self.heads.d_e,
            k_v=self.heads.k_v,
            grounding_heads=self.heads.grounding_heads,
            seed=self.model_seed,
            dtype=np.float64 if self.precision == "f64" else np.float32,
            **ABLATIONS[self.variant],
        )

    def to_json_dict(self) -> dict:
        out = {
            "model": asdict(self.model),
            "heads": asdict(self.heads),
            "train": {k: _train_dict(v) for k, v in sorted(self.train.items())},
            "data": asdict(self.data),
            "paths": asdict(self.paths),
            "variant": self.variant,
            "precision": self.precision,
            "model_seed": self.model_seed,
        }
        return out


def _train_dict(tc: TrainConfig) -> dict:
    d = {
        "epochs": tc.epochs,
        "batch_size": tc.batch_size,
        "learning_rate": tc.learning_rate,
        "weight_decay": tc.weight_decay,
        "lam": tc.lam,
        "seed": tc.seed,
        "joint_negative_pool": tc.joint_negative_pool,
    }
    return d


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {unknown}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    _check_keys(
        "config",
        doc,
        {"model", "heads", "train", "data", "paths", "variant", "precision", "model_seed"},
    )
    model_doc = doc.get("model", {})
    _check_keys("model", model_doc, {"c", "heads", "layers", "p", "patch_dim", "vocab", "max_t", "k"})
    heads_doc = doc.get("heads", {})
    _check_keys("heads", heads_doc, {"k_v", "d_e", "grounding_heads"})
    data_doc = doc.get("data", {})
    _check_keys(
        "data", data_doc,
        {"stage1_count", "stage2_count", "eval_count", "base_seed", "expert_seed"},
    )
    paths_doc = doc.get("paths", {})
    _check_keys("paths", paths_doc, {"workdir"})
    train_doc = doc.get("train", {})
    if not isinstance(train_doc, dict):
        raise ConfigError("train section must be an object")
    train = {}
    for key, sub in train_doc.items():
        if key not in ("stage1", "stage2"):
            raise ConfigError(f"train section key must be stage1/stage2, got {key!r}")
        _check_keys(
            f"train.{key}", sub,
            {"epochs", "batch_size", "learning_rate", "weight_decay", "lam", "seed",
             "joint_negative_pool"},
        )
        train[key] = TrainConfig(stage=int(key[-1]), **sub)
    try:
        return RunConfig(
            model=BackboneConfig(**model_doc),
            heads=HeadsConfig(**heads_doc),
            train=train,
            data=DataConfig(**data_doc),
            paths=PathsConfig(**paths_doc),
            variant=doc.get("variant", "full"),
            precision=doc.get("precision", "f32"),
            model_seed=doc.get("model_seed", 0),
        )
    except TypeError as e:
        raise ConfigError(f"malformed config: {e}") from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return config_from_dict(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json_dict(), indent=2) + "\n")


def toy_config() -> RunConfig:
    """Desk-scale operating point: trains in minutes on a few CPU cores."""
    return RunConfig(
        model=BackboneConfig(c=64, heads=4, layers=2, p=16, patch_dim=48, vocab=33, max_t=64, k=4),
        heads=HeadsConfig(k_v=4, d_e=16, grounding_heads=1),
        train={
            "stage1": TrainConfig(stage=1, epochs=16, batch_size=16, learning_rate=2e-3,
                                  weight_decay=0.01, lam=0.01, seed=11),
            "stage2": TrainConfig(stage=2, epochs=24, batch_size=16, learning_rate=2e-3,
                                  weight_decay=0.01, lam=0.01, seed=22),
        },
        data=DataConfig(stage1_count=2000, stage2_count=2000, eval_count=500,
                        base_seed=1234, expert_seed=7),
    )


def paper_config() -> RunConfig:
    """Reference operating point of the original system, for documentation.

    Uses the published hyperparameters (K=40 queries per bank, batch 64,
    stage learning rates 8e-6 and 4e-6, AdamW, lam=0.01). Not intended to be
    trained at desk scale."""
    return RunConfig(
        model=BackboneConfig(c=64, heads=4, layers=2, p=16, patch_dim=48, vocab=33,
                             max_t=160, k=40),
        heads=HeadsConfig(k_v=4, d_e=16, grounding_heads=1),
        train={
            "stage1": TrainConfig(stage=1, epochs=1, batch_size=64, learning_rate=8e-6,
                                  weight_decay=0.01, lam=0.01, seed=11),
            "stage2": TrainConfig(stage=2, epochs=1, batch_size=64, learning_rate=4e-6,
                                  weight_decay=0.01, lam=0.01, seed=22),
        },
        data=DataConfig(stage1_count=2000, stage2_count=2000, eval_count=500,
                        base_seed=1234, expert_seed=7),
    )


PRESETS = {"toy": toy_config, "paper": paper_config}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, have {sorted(PRESETS)}")
    return PRESETS[name]()
