"""Config loading: TOML parsing, env interpolation, batch validation."""

from __future__ import annotations

import pytest

from guided_sampling.config import (
    STORE_ROOT_ENV,
    BackendSpec,
    RunConfig,
    build_config,
    load_config,
    with_overrides,
)
from guided_sampling.errors import ConfigError


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "questions.jsonl"
    path.write_text(
        '{"id": "q1", "text": "What is 6*7?", "domain_kind": "math", '
        '"ground_truth": {"kind": "exact_answer", "payload": "42"}}\n'
    )
    return path


@pytest.fixture
def config_file(tmp_path, dataset):
    path = tmp_path / "run.toml"
    path.write_text(
        f"""
dataset_path = "{dataset}"
strategy = "guided"
run_id = "demo"
seed = 7
store_root = "{tmp_path / 'runs'}"

[budget]
total_generation_calls = 10
max_concepts = 2
per_concept = [5, 5]

[solver]
kind = "scripted"
fallback = "stub response"
"""
    )
    return path


class TestLoadConfig:
    def test_happy_path(self, config_file):
        cfg = load_config(config_file)
        assert cfg.run_id == "demo"
        assert cfg.total_generation_calls == 10
        assert cfg.per_concept == (5, 5)
        assert cfg.solver.kind == "scripted"
        assert cfg.judge is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(tmp_path / "nope.toml")
        assert any("not found" in v for v in err.value.violations)

    def test_invalid_toml(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("run_id = [unclosed\n")
        with pytest.raises(ConfigError) as err:
            load_config(bad)
        assert any("TOML" in v for v in err.value.violations)

    def test_env_interpolation(self, tmp_path, dataset, monkeypatch):
        monkeypatch.setenv("TEST_GS_KEY", "sk-sekrit")
        path = tmp_path / "run.toml"
        path.write_text(
            f"""
dataset_path = "{dataset}"
store_root = "{tmp_path}"

[budget]
total_generation_calls = 4
max_concepts = 0

[solver]
kind = "http"
base_url = "http://localhost:9"
model = "m"
api_key = "${{TEST_GS_KEY}}"
"""
        )
        cfg = load_config(path)
        assert cfg.solver.api_key == "sk-sekrit"

    def test_missing_env_var_is_a_violation(self, tmp_path, dataset, monkeypatch):
        monkeypatch.delenv("TEST_GS_MISSING", raising=False)
        path = tmp_path / "run.toml"
        path.write_text(
            f"""
dataset_path = "{dataset}"

[solver]
kind = "http"
base_url = "http://localhost:9"
model = "m"
api_key = "${{TEST_GS_MISSING}}"
"""
        )
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert any("TEST_GS_MISSING" in v for v in err.value.violations)

    def test_cli_overrides_win(self, config_file):
        cfg = load_config(config_file, overrides={"run_id": "other", "seed": None})
        assert cfg.run_id == "other"
        assert cfg.seed == 7  # None overrides are ignored

    def test_secrets_never_in_snapshot(self, tmp_path, dataset, monkeypatch):
        monkeypatch.setenv("TEST_GS_KEY", "sk-sekrit")
        path = tmp_path / "run.toml"
        path.write_text(
            f"""
dataset_path = "{dataset}"
store_root = "{tmp_path}"

[budget]
total_generation_calls = 4
max_concepts = 0

[solver]
kind = "http"
base_url = "http://localhost:9"
model = "m"
api_key = "${{TEST_GS_KEY}}"
"""
        )
        snapshot = load_config(path).snapshot()
        assert "sk-sekrit" not in repr(snapshot)


class TestValidation:
    def base_raw(self, dataset, tmp_path):
        return {
            "dataset_path": str(dataset),
            "store_root": str(tmp_path),
            "budget": {"total_generation_calls": 10, "max_concepts": 2, "per_concept": [5, 5]},
            "solver": {"kind": "scripted", "fallback": "x"},
        }

    def test_all_violations_reported_together(self, tmp_path):
        raw = {
            "dataset_path": str(tmp_path / "missing.jsonl"),
            "strategy": "best_of_both",
            "store_root": str(tmp_path),
            "budget": {"total_generation_calls": 0, "max_concepts": -1},
            "temperature": -0.5,
            "run_id": "a/b",
            "solver": {"kind": "scripted", "fallback": "x"},
        }
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        joined = "\n".join(err.value.violations)
        assert "dataset_path does not exist" in joined
        assert "strategy" in joined
        assert "total_generation_calls" in joined
        assert "max_concepts" in joined
        assert "temperature" in joined
        assert "run_id" in joined
        assert len(err.value.violations) >= 6

    def test_solver_section_required(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        del raw["solver"]
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        assert any("[solver]" in v for v in err.value.violations)

    def test_http_solver_needs_url_and_model(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        raw["solver"] = {"kind": "http"}
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        joined = "\n".join(err.value.violations)
        assert "base_url" in joined
        assert "model" in joined

    def test_scripted_solver_needs_script_or_fallback(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        raw["solver"] = {"kind": "scripted"}
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        assert any("script_path or fallback" in v for v in err.value.violations)

    def test_split_must_sum(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        raw["budget"]["per_concept"] = [5, 4]
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        assert any("sum" in v for v in err.value.violations)

    def test_split_forbidden_for_rs(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        raw["budget"] = {"total_generation_calls": 10, "max_concepts": 0, "per_concept": [10]}
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        assert any("per_concept must be empty" in v for v in err.value.violations)

    def test_unknown_template_slot(self, dataset, tmp_path):
        raw = self.base_raw(dataset, tmp_path)
        raw["templates"] = {"math": {"bogus_slot": str(tmp_path)}}
        with pytest.raises(ConfigError) as err:
            build_config(raw)
        assert any("unknown template slot" in v for v in err.value.violations)

    def test_store_root_env_fallback(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv(STORE_ROOT_ENV, str(tmp_path / "env-runs"))
        raw = self.base_raw(dataset, tmp_path)
        del raw["store_root"]
        cfg = build_config(raw)
        assert cfg.store_root == str(tmp_path / "env-runs")


class TestWithOverrides:
    def good(self, dataset, tmp_path) -> RunConfig:
        return build_config(
            {
                "dataset_path": str(dataset),
                "store_root": str(tmp_path),
                "budget": {"total_generation_calls": 10, "max_concepts": 2, "per_concept": [5, 5]},
                "solver": {"kind": "scripted", "fallback": "x"},
            }
        )

    def test_replaces_and_revalidates(self, dataset, tmp_path):
        cfg = self.good(dataset, tmp_path)
        out = with_overrides(cfg, run_id="sweep-K0", max_concepts=0, per_concept=())
        assert out.run_id == "sweep-K0"
        assert out.max_concepts == 0

    def test_none_values_ignored(self, dataset, tmp_path):
        cfg = self.good(dataset, tmp_path)
        assert with_overrides(cfg, run_id=None) == cfg

    def test_invalid_override_rejected(self, dataset, tmp_path):
        cfg = self.good(dataset, tmp_path)
        with pytest.raises(ConfigError):
            with_overrides(cfg, total_generation_calls=0)


class TestBackendSpec:
    def test_to_dict_omits_api_key(self):
        spec = BackendSpec(kind="http", base_url="http://x", model="m", api_key="sk-1")
        assert "api_key" not in spec.to_dict()
        assert "sk-1" not in repr(spec.to_dict())

    def test_scripted_dict_shape(self):
        spec = BackendSpec(kind="scripted", script_path="s.toml", fallback="f", seed=3)
        assert spec.to_dict() == {
            "kind": "scripted",
            "seed": 3,
            "script_path": "s.toml",
            "fallback": "f",
        }
