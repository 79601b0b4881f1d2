import json

import pytest

from reviewrec.backend import MockBackend
from reviewrec.config import BACKEND_ROLES, BackendConfig, PipelineConfig, load_preset
from reviewrec.errors import ConfigError


def minimal(**overrides):
    data = {"data_path": "reviews.jsonl", "output_dir": "out"}
    data.update(overrides)
    return data


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig.from_dict(minimal())
        assert cfg.kcore_k == 5
        assert cfg.max_history == 10
        assert cfg.tau == 0.1
        assert cfg.max_filter_iters == 5

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="made_up"):
            PipelineConfig.from_dict(minimal(made_up=1))

    def test_invalid_values_listed(self):
        with pytest.raises(ConfigError) as exc:
            PipelineConfig.from_dict(minimal(kcore_k=0, max_history=0))
        assert "kcore_k" in str(exc.value)
        assert "max_history" in str(exc.value)

    def test_bad_fractions(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(minimal(valid_fraction=0.6, test_fraction=0.5))

    def test_unknown_backend_role(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(minimal(backends={"oracle": {"type": "mock"}}))

    def test_from_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(minimal(seed=42)))
        cfg = PipelineConfig.from_json(path)
        assert cfg.seed == 42
        assert cfg.config_dir == str(tmp_path)

    def test_unreadable_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            PipelineConfig.from_json(path)

    def test_hash_stable_and_sensitive(self):
        a = PipelineConfig.from_dict(minimal(seed=1))
        b = PipelineConfig.from_dict(minimal(seed=1))
        c = PipelineConfig.from_dict(minimal(seed=2))
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()

    def test_missing_backend_role_error(self):
        cfg = PipelineConfig.from_dict(minimal())
        with pytest.raises(ConfigError, match="teacher"):
            cfg.backend("teacher")


class TestBackendConfig:
    def test_mock_requires_script(self, tmp_path):
        with pytest.raises(ConfigError):
            BackendConfig(type="mock").build(tmp_path)

    def test_mock_relative_script_resolved(self, tmp_path):
        script = tmp_path / "script.json"
        script.write_text(json.dumps({"rules": [{"responses": [{"text": "x"}]}]}))
        backend = BackendConfig(type="mock", script_path="script.json").build(tmp_path)
        assert isinstance(backend, MockBackend)

    def test_http_requires_endpoint(self, tmp_path):
        with pytest.raises(ConfigError):
            BackendConfig(type="http").build(tmp_path)

    def test_http_reads_credential_from_env_name_only(self, tmp_path):
        backend = BackendConfig(
            type="http", base_url="http://example.test", model="m"
        ).build(tmp_path)
        # the credential itself never lives in the config, only the env var name
        assert backend.api_key_env == "REVIEWREC_API_KEY"

    def test_unknown_type(self, tmp_path):
        with pytest.raises(ConfigError):
            BackendConfig(type="grpc").build(tmp_path)


class TestPresets:
    @pytest.mark.parametrize(
        "name,tau,noun",
        [("music", 0.1, "Music"), ("book", 0.2, "Book"), ("yelp", 0.04, "Business")],
    )
    def test_thresholds(self, name, tau, noun):
        preset = load_preset(name)
        assert preset["tau"] == tau
        assert preset["kcore_k"] == 5
        assert preset["domain_noun"] == noun

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("movies")

    def test_preset_fields_are_valid_config(self):
        for name in ("music", "book", "yelp"):
            cfg = PipelineConfig.from_dict({**load_preset(name), **minimal()})
            assert cfg.kcore_k == 5

    def test_explicit_config_overrides_preset(self):
        merged = {**load_preset("music"), **minimal(tau=0.3)}
        assert PipelineConfig.from_dict(merged).tau == 0.3
