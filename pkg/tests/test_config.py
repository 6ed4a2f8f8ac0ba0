import json

import pytest

from fame.config import (
    ConfigError,
    PipelineConfig,
    config_from_dict,
    load_config,
    stage_seed,
)


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.seed, cfg.k, cfg.data.offline_fraction) == (0, 100, 0.85)
    assert (cfg.drain.similarity_threshold, cfg.drain.tree_depth) == (0.5, 4)
    assert (cfg.training.gamma, cfg.training.alpha) == (2.0, 0.75)
    assert cfg.router.gate_threshold == 0.5 and cfg.router.subsample_ratio == 3.0
    assert cfg.calibration.fusion_grid == [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
    assert cfg.backbone.adapt_cap == 200_000


def test_partial_override():
    cfg = config_from_dict({"seed": 7, "router": {"max_epochs": 3}})
    assert cfg.seed == 7 and cfg.router.max_epochs == 3 and cfg.router.val_fraction == 0.1


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"router": {"nope": 2}}, {"router": 5}])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"k": 25}))
    assert load_config(p).k == 25
    assert load_config(None) == PipelineConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


def test_roundtrip_json():
    cfg = config_from_dict({"seed": 3, "partition": {"mode": "import", "path": "x.json"}})
    assert config_from_dict(json.loads(cfg.to_json())) == cfg


def test_hash_ignores_output_dir():
    a = PipelineConfig(output_dir="a")
    b = PipelineConfig(output_dir="b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != PipelineConfig(seed=1).config_hash()


def test_stage_seeds():
    assert stage_seed(0, "gate") == stage_seed(0, "gate")
    assert stage_seed(0, "gate") != stage_seed(0, "selector")
    assert stage_seed(0, "gate") != stage_seed(1, "gate")
    assert 0 <= stage_seed(123, "x") < 2**32
    assert PipelineConfig(seed=5).stage_seed("adapt") == stage_seed(5, "adapt")
