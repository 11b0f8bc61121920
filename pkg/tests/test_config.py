import pytest

from handmorph.config import ConfigError, GraspType, RunConfig, config_from_mapping, load_config
from handmorph.pipeline import packaged_path


def test_shipped_defaults_match_dataclasses():
    assert load_config(packaged_path("defaults.toml")) == RunConfig()


def test_overlay_changes_only_named_keys(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[run]\nvariants = 5\n[ranking]\nquality_threshold = 6.5\n"
                    "[priors.tool_based]\nfinger_scale_multiplier = 1.3\n")
    cfg = load_config(path)
    assert cfg.variants == 5 and cfg.ranking.quality_threshold == 6.5
    assert cfg.ranking.w_sem == 0.6
    assert cfg.priors[GraspType.TOOL_BASED].finger_scale_multiplier == 1.3
    assert cfg.priors[GraspType.FORCE_BASED] == RunConfig().priors[GraspType.FORCE_BASED]


@pytest.mark.parametrize("data", [
    {"nonsense": {}},
    {"ranking": {"w_semantic": 0.5}},
    {"ranking": {"w_sem": 0.7, "w_size": 0.4}},
    {"priors": {"pinch": {}}},
    {"run": {"colour": "red"}},
    {"constraints": {"slenderness_range": [6.0, 1.5]}},
])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigError):
        config_from_mapping(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\nvariants = ")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_run_config_invariants():
    with pytest.raises(ConfigError):
        RunConfig(variants=0)
    with pytest.raises(ConfigError):
        RunConfig(workers=0)
