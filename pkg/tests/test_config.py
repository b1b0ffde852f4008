import json

import pytest

from netmax.core.config import Settings, apply_overrides, load_experiment_config, parse_experiment_config
from netmax.core.exceptions import ConfigInvalidError
from netmax.models.experiment import ExperimentConfig, ProtocolName


def test_defaults_materialize():
    config = ExperimentConfig()
    dumped = config.model_dump(mode="json")
    assert dumped["protocol"]["name"] == "netmax"
    assert dumped["schema_version"] == 1
    assert ExperimentConfig.model_validate(dumped) == config


def test_shipped_configs_validate(config_dir):
    for path in sorted(config_dir.glob("*.json")):
        if path.stem.endswith("_times"):
            continue
        config = load_experiment_config(path)
        assert config.name == path.stem


def test_overrides_are_json_parsed():
    config = parse_experiment_config({}, ["seed=7", "protocol.name=\"uniform-async\"", "stop.max_time=null"])
    assert config.seed == 7
    assert config.protocol.name is ProtocolName.UNIFORM_ASYNC
    assert config.stop.max_time is None


def test_override_creates_sections():
    assert apply_overrides({}, ["loss.dim=2"]) == {"loss": {"dim": 2}}


def test_override_without_equals():
    with pytest.raises(ConfigInvalidError):
        apply_overrides({}, ["seed"])


def test_malformed_json_reports_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "name": \n}')
    with pytest.raises(ConfigInvalidError) as info:
        load_experiment_config(path)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_unknown_field_rejected():
    with pytest.raises(ConfigInvalidError) as info:
        parse_experiment_config({"protocol": {"alpah": 0.1}})
    assert "protocol.alpah" in info.value.describe()


def test_shape_checks():
    with pytest.raises(ConfigInvalidError):
        parse_experiment_config({"topology": {"node_count": 3}, "link_times": {"compute_time": [0.1, 0.2]}})
    with pytest.raises(ConfigInvalidError):
        parse_experiment_config({"topology": {"node_count": 3}, "link_times": {"link_overrides": [{"link": [0, 5], "comm_time": 2.0}]}})


def test_needs_a_stop_condition():
    with pytest.raises(ConfigInvalidError):
        parse_experiment_config({"stop": {"max_time": None, "max_steps": None}})


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("NETMAX_LOG_LEVEL", "debug")
    monkeypatch.setenv("NETMAX_SWEEP_WORKERS", "3")
    settings = Settings()
    assert settings.log_level == "DEBUG"
    assert settings.sweep_workers == 3


def test_settings_reject_bad_log_format(monkeypatch):
    monkeypatch.setenv("NETMAX_LOG_FORMAT", "xml")
    with pytest.raises(ValueError):
        Settings()


def test_round_trips_through_json(load_config):
    config = load_config("canonical_hetero")
    assert ExperimentConfig.model_validate(json.loads(config.model_dump_json())) == config


def test_settings_defaults(monkeypatch):
    monkeypatch.delenv("NETMAX_VERIFY_SEED_COUNT", raising=False)
    monkeypatch.delenv("NETMAX_VERIFY_TOPOLOGY_COUNT", raising=False)
    settings = Settings(_env_file=None)
    assert settings.verify_seed_count == 100
    assert settings.verify_topology_count == 200


def test_allreduce_defaults_to_ring():
    assert ExperimentConfig().protocol.allreduce_scope == "ring"


def test_heterogeneous_config_rotates_one_slow_link(load_config):
    config = load_config("canonical_hetero")
    assert config.link_times.link_overrides == []
    assert config.slowdown.enabled
    assert config.slowdown.factor_low == config.slowdown.factor_high == 10.0
    assert config.slowdown.rotation_interval == 50.0
    assert config.protocol.monitor_period == 20.0
    assert config.protocol.allreduce_scope == "all"


@pytest.mark.parametrize("execution, expected", [("parallel", 1.0), ("serial", 1.2)])
def test_execution_mode_reaches_link_model(execution, expected):
    from netmax.services.environment import build_link_model, build_topology

    config = parse_experiment_config({"link_times": {"compute_time": 0.2, "comm_time": 1.0, "execution": execution}})
    topology = build_topology(config.topology)
    assert build_link_model(config, topology).iteration_time(0, 1, 0.0) == pytest.approx(expected)


def test_execution_mode_is_validated():
    with pytest.raises(ConfigInvalidError):
        parse_experiment_config({"link_times": {"execution": "pipelined"}})
