"""Run-config schema: strict key validation, presets, round trips, builders."""

import json

import numpy as np
import pytest

from gamsi.backbone import BackboneConfig
from gamsi.config import (
    PRESETS,
    DataConfig,
    HeadsConfig,
    RunConfig,
    config_from_dict,
    load_config,
    paper_config,
    preset,
    save_config,
    toy_config,
)
from gamsi.errors import ConfigError
from gamsi.training import TrainConfig


# ---------------------------------------------------------------- sections

def test_heads_config_positivity():
    HeadsConfig(k_v=1, d_e=1, grounding_heads=1)
    for bad in (dict(k_v=0), dict(d_e=0), dict(grounding_heads=-1)):
        with pytest.raises(ConfigError):
            HeadsConfig(**bad)


def test_data_config_counts_nonnegative():
    DataConfig(stage1_count=0, stage2_count=0, eval_count=0)
    with pytest.raises(ConfigError):
        DataConfig(eval_count=-1)


def test_run_config_variant_and_precision_checked():
    with pytest.raises(ConfigError, match="variant"):
        RunConfig(variant="fullest")
    with pytest.raises(ConfigError, match="precision"):
        RunConfig(precision="f16")


def test_train_section_stage_must_match_key():
    with pytest.raises(ConfigError):
        RunConfig(train={"stage1": TrainConfig(stage=2)})
    with pytest.raises(ConfigError):
        RunConfig(train={"stage3": TrainConfig(stage=1)})


def test_stage_config_lookup():
    cfg = toy_config()
    assert cfg.stage_config(1).stage == 1
    assert cfg.stage_config(2).stage == 2
    with pytest.raises(ConfigError):
        RunConfig().stage_config(1)


# ------------------------------------------------------------- strict keys

def test_unknown_keys_rejected_at_every_level():
    base = toy_config().to_json_dict()

    def with_extra(path, key):
        doc = json.loads(json.dumps(base))
        node = doc
        for part in path:
            node = node[part]
        node[key] = 1
        return doc

    for path in ([], ["model"], ["heads"], ["data"], ["paths"], ["train", "stage1"]):
        doc = with_extra(path, "surprise")
        with pytest.raises(ConfigError, match="surprise"):
            config_from_dict(doc)


def test_bad_train_key_and_non_dict_root():
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"stage9": {}}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": []})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


def test_malformed_section_value_is_config_error():
    # Wrong type inside a known key surfaces as ConfigError, not TypeError.
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"c": None}})


# ------------------------------------------------------------- round trips

def test_save_load_round_trip(tmp_path):
    cfg = toy_config()
    path = tmp_path / "run.json"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded.to_json_dict() == cfg.to_json_dict()
    # And the document itself is plain JSON with the five sections.
    doc = json.loads(path.read_text())
    assert set(doc) == {"model", "heads", "train", "data", "paths",
                        "variant", "precision", "model_seed"}


def test_defaults_fill_missing_sections():
    cfg = config_from_dict({})
    assert cfg.variant == "full"
    assert cfg.precision == "f32"
    assert cfg.train == {}
    assert cfg.model == BackboneConfig()


def test_invalid_json_file(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


# ----------------------------------------------------------------- presets

def test_presets_table():
    assert set(PRESETS) == {"toy", "paper"}
    with pytest.raises(ConfigError):
        preset("giant")


def test_toy_preset_operating_point():
    cfg = toy_config()
    m = cfg.model
    assert (m.c, m.heads, m.layers, m.p, m.patch_dim) == (64, 4, 2, 16, 48)
    assert (m.vocab, m.max_t, m.k) == (33, 64, 4)
    s1, s2 = cfg.stage_config(1), cfg.stage_config(2)
    assert (s1.epochs, s2.epochs) == (16, 24)
    assert s1.batch_size == 16 and s1.learning_rate == 2e-3
    assert s1.lam == 0.01 and s1.weight_decay == 0.01
    assert s1.seed != s2.seed
    # Round trip through the dict codec must be lossless.
    assert config_from_dict(cfg.to_json_dict()).to_json_dict() == cfg.to_json_dict()


def test_paper_preset_reference_point():
    cfg = paper_config()
    assert cfg.model.k == 40
    assert cfg.model.max_t == 160
    assert cfg.stage_config(1).batch_size == 64
    assert cfg.stage_config(1).learning_rate == 8e-6
    assert cfg.stage_config(2).learning_rate == 4e-6
    assert config_from_dict(cfg.to_json_dict()).to_json_dict() == cfg.to_json_dict()


# ---------------------------------------------------------------- builders

def test_build_model_respects_variant_and_precision():
    base = toy_config()
    base.variant = "struct-only"
    base.precision = "f64"
    model = base.build_model()
    assert model.use_metric is False and model.use_struct is True
    assert model.dtype == np.float64
    assert model.cfg == base.model

    base2 = toy_config()
    model2 = base2.build_model()
    assert model2.dtype == np.float32
    assert model2.use_metric and model2.use_struct and model2.use_mask


def test_build_model_seed_reproducible():
    cfg = toy_config()
    cfg.model_seed = 9
    a, b = cfg.build_model(), cfg.build_model()
    for name, p in a.named_parameters().items():
        assert p.data.tobytes() == b.named_parameters()[name].data.tobytes()
