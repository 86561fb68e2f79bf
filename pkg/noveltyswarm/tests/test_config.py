"""Tests for runtime settings and experiment configuration"""

import json

import pytest
import yaml

from noveltyswarm.config.experiment import (
    ExperimentConfig, list_presets, load_config, parse_config, preset,
)
from noveltyswarm.config.settings import get_settings, reload_settings
from noveltyswarm.core.selection import SelectionPolicy
from noveltyswarm.core.tasks import TaskKind
from noveltyswarm.utils.errors import ConfigurationError


class TestSettings:
    """Environment-backed process settings"""

    def teardown_method(self):
        reload_settings()

    def test_defaults(self):
        """Test settings defaults"""
        settings = reload_settings()
        assert settings.workers >= 1
        assert settings.log_format in ("json", "console")
        assert get_settings() is settings

    def test_environment_override(self, monkeypatch):
        """Test environment variables override settings"""
        monkeypatch.setenv("NOVELTYSWARM_WORKERS", "4")
        monkeypatch.setenv("NOVELTYSWARM_LOG_LEVEL", "debug")
        settings = reload_settings()
        assert settings.workers == 4
        assert settings.log_level == "DEBUG"

    def test_invalid_log_format(self, monkeypatch):
        """Test an unknown log format is rejected"""
        monkeypatch.setenv("NOVELTYSWARM_LOG_FORMAT", "xml")
        with pytest.raises(ValueError):
            reload_settings()


class TestExperimentConfig:
    """Schema validation, defaults and hashing"""

    def test_defaults(self):
        """Test experiment defaults"""
        config = ExperimentConfig()
        assert config.task is TaskKind.AGGREGATION
        assert config.runs == 30
        assert config.task_config().descriptor_length == 100
        assert config.levels == [0.60, 0.65, 0.70, 0.75, 0.80, 0.85]

    def test_resource_levels(self):
        """Test resource experiments get resource fitness levels"""
        config = ExperimentConfig(task="resource", characterisation="bsimple")
        assert config.levels == [0.2, 0.4, 0.6, 0.8, 0.9]

    def test_lists_every_offending_field(self):
        """Test validation reports every bad field at once"""
        with pytest.raises(ConfigurationError) as info:
            parse_config({"trials": 0, "runs": -1, "evolution": {"population_size": 0}})
        message = str(info.value)
        assert "trials" in message
        assert "runs" in message
        assert "evolution.population_size" in message
        assert info.value.exit_code == 1

    def test_unknown_key_rejected(self):
        """Test unknown keys are rejected"""
        with pytest.raises(ConfigurationError):
            parse_config({"bogus": 1})

    def test_incompatible_characterisation(self):
        """Test a characterisation from the other task is rejected"""
        with pytest.raises(ConfigurationError):
            parse_config({"task": "resource", "characterisation": "bcm"})

    def test_schema_version(self):
        """Test an unsupported schema version is rejected"""
        with pytest.raises(ConfigurationError):
            parse_config({"schema_version": 2})

    def test_density_component_range(self):
        """Test density components must fit the descriptor"""
        with pytest.raises(ConfigurationError):
            parse_config({"task": "resource", "characterisation": "bsimple", "density": {"x": 0, "y": 2}})

    def test_descending_levels(self):
        """Test fitness levels must ascend"""
        with pytest.raises(ConfigurationError):
            parse_config({"complexity_levels": [0.8, 0.6]})

    def test_not_a_mapping(self):
        """Test a config that is not a mapping is rejected"""
        with pytest.raises(ConfigurationError):
            parse_config([1, 2])

    def test_hash_stable_and_sensitive(self):
        """Test the hash is stable and changes with any field"""
        a = ExperimentConfig(master_seed=3)
        assert a.config_hash() == ExperimentConfig(master_seed=3).config_hash()
        assert a.config_hash() != ExperimentConfig(master_seed=4).config_hash()
        assert len(a.config_hash()) == 64

    def test_hash_ignores_output_dir(self):
        """Test the output directory does not enter the hash"""
        assert ExperimentConfig(output_dir="a").config_hash() == ExperimentConfig(output_dir="b").config_hash()

    def test_hash_fills_default_sim(self):
        """Test an explicit default simulator hashes like an omitted one"""
        explicit = ExperimentConfig(sim=ExperimentConfig().task_config().sim)
        assert explicit.config_hash() == ExperimentConfig().config_hash()

    def test_canonical_round_trip(self):
        """Test the canonical form loads back to the same config"""
        config = ExperimentConfig(name="round", runs=2)
        again = parse_config(json.loads(json.dumps(config.canonical())))
        assert again.config_hash() == config.config_hash()


class TestLoading:
    """JSON and YAML files, presets"""

    def test_yaml_and_json_agree(self, tmp_path):
        """Test YAML and JSON files give the same config"""
        data = {"name": "x", "task": "resource", "characterisation": "bextra",
                "selection": {"policy": "pmcns"}, "runs": 2}
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(data))
        (tmp_path / "c.json").write_text(json.dumps(data))
        a = load_config(tmp_path / "c.yaml")
        b = load_config(tmp_path / "c.json")
        assert a.config_hash() == b.config_hash()
        assert a.selection.policy is SelectionPolicy.PMCNS

    def test_output_dir_override(self, tmp_path):
        """Test the output directory can be overridden at load time"""
        (tmp_path / "c.json").write_text("{}")
        config = load_config(tmp_path / "c.json", output_dir=tmp_path / "out")
        assert config.output_dir == tmp_path / "out"

    def test_missing_file(self, tmp_path):
        """Test a missing file is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.json")

    def test_unparseable_file(self, tmp_path):
        """Test an unparseable file is a configuration error"""
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "bad.json")

    def test_presets_validate(self):
        """Test every bundled preset validates"""
        names = list_presets()
        assert {"aggregation", "resource", "resource-pmcns", "desk-smoke"} <= set(names)
        for name in names:
            assert preset(name).name == name

    def test_full_scale_protocol(self):
        """Test full-scale presets follow the full protocol for both tasks"""
        config = preset("aggregation")
        assert config.evolution.population_size == 200
        assert config.evolution.generations == 250
        assert (config.trials, config.runs) == (10, 30)
        for name in ("resource", "resource-pmcns", "resource-scalarization"):
            config = preset(name)
            assert config.evolution.population_size == 200
            assert config.evolution.generations == 400
            assert (config.trials, config.runs) == (10, 30)

    def test_preset_overrides(self):
        """Test preset fields can be overridden"""
        assert preset("desk-smoke", runs=1).runs == 1

    def test_unknown_preset(self):
        """Test an unknown preset name is rejected"""
        with pytest.raises(ConfigurationError):
            preset("nope")
