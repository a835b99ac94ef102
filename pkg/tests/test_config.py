import json

import pytest

from deflicker.config import ConfigError, PipelineConfig, parse_value


def test_defaults_validate_and_share_one_seed():
    cfg = PipelineConfig(seed=7)
    cfg.validate()
    assert cfg.atlas_config().seed == 7
    assert cfg.filter_config().seed == 7
    assert cfg.refiner_config().seed == 7
    assert cfg.flicker_spec().seed == 7
    assert "seed" not in cfg.atlas


def test_dotted_overrides():
    cfg = PipelineConfig().apply_overrides({"atlas.iterations": 12, "flow.levels": 2, "seed": 3})
    assert cfg.atlas_config().iterations == 12
    assert cfg.flow_config().levels == 2
    assert cfg.seed == 3


def test_nested_override_into_distortion():
    cfg = PipelineConfig().apply_overrides({"filter.distortion.blob_count": 0})
    assert cfg.filter_config().distortion.blob_count == 0


@pytest.mark.parametrize("key", ["atlas.nope", "nope.iterations", "atlas.iterations.x"])
def test_unknown_override_rejected(key):
    with pytest.raises(ConfigError):
        PipelineConfig().apply_overrides({key: 1})


@pytest.mark.parametrize("override", [{"atlas.iterations": 0}, {"seed": -1}, {"eval.flow_source": "magic"},
                                      {"refiner.lambda_temporal": -1.0}, {"flicker.window_size": 0},
                                      {"refiner_clips.clean_fraction": 1.5}, {"refiner_clips.frames": 1}])
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        PipelineConfig().apply_overrides(override)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": {}})


def test_load_roundtrip(tmp_path):
    cfg = PipelineConfig(seed=5).apply_overrides({"atlas.iterations": 99})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.load(p).to_dict() == cfg.to_dict()


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")


def test_snapshot_hash_ignores_paths_but_tracks_numbers():
    a = PipelineConfig()
    b = a.apply_overrides({"paths.work": "/elsewhere"})
    c = a.apply_overrides({"atlas.lr": 0.5})
    assert a.snapshot_hash() == b.snapshot_hash()
    assert a.snapshot_hash() != c.snapshot_hash()
    assert "paths" not in a.snapshot()


def test_parse_value():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("null") is None
    assert parse_value("reference") == "reference"
