"""Run configuration: TOML file loading, env interpolation, validation.

Validation collects every violation and reports them together, so an
operator fixes a bad config in one round trip rather than one error at a
time. Secrets are referenced as ${VAR} and resolved from the environment at
load time.
"""

from __future__ import annotations

import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

STORE_ROOT_ENV = "GS_STORE_ROOT"

STRATEGIES = ("rs", "guided")
_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class BackendSpec:
    """How to reach one model endpoint, or a script standing in for one."""

    kind: str = "http"  # http | scripted
    base_url: str = ""
    model: str = ""
    api_key: Optional[str] = None
    script_path: Optional[str] = None
    fallback: Optional[str] = None
    seed: int = 0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "http":
            d["base_url"] = self.base_url
            d["model"] = self.model
        else:
            d["script_path"] = self.script_path
            d["fallback"] = self.fallback
        return d


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str = ""
    strategy: str = "guided"
    total_generation_calls: int = 100
    max_concepts: int = 4
    per_concept: tuple[int, ...] = ()
    temperature: float = 1.0
    max_tokens: int = 1024
    parallelism: int = 8
    store_root: str = ""
    run_id: str = "run"
    seed: int = 0
    keep_duplicates: bool = False
    on_empty_exploration: str = "rs"
    template_overrides: dict[str, dict[str, str]] = field(default_factory=dict)
    solver: BackendSpec = field(default_factory=BackendSpec)
    judge: Optional[BackendSpec] = None

    def snapshot(self) -> dict:
        """Manifest-embeddable view of the config (secrets omitted)."""
        return {
            "dataset_path": self.dataset_path,
            "strategy": self.strategy,
            "total_generation_calls": self.total_generation_calls,
            "max_concepts": self.max_concepts,
            "per_concept": list(self.per_concept),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "parallelism": self.parallelism,
            "store_root": self.store_root,
            "run_id": self.run_id,
            "seed": self.seed,
            "keep_duplicates": self.keep_duplicates,
            "on_empty_exploration": self.on_empty_exploration,
            "template_overrides": self.template_overrides,
            "solver": self.solver.to_dict(),
            "judge": self.judge.to_dict() if self.judge else None,
        }


def _interpolate(value: Any, violations: list[str], where: str) -> Any:
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            var = m.group(1)
            resolved = os.environ.get(var)
            if resolved is None:
                violations.append(f"{where}: environment variable {var} is not set")
                return ""
            return resolved

        return _ENV_REF.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, violations, f"{where}.{k}") for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, violations, f"{where}[{i}]") for i, v in enumerate(value)]
    return value


def _backend_spec(raw: dict, where: str, violations: list[str]) -> BackendSpec:
    kind = raw.get("kind", "http")
    if kind not in ("http", "scripted"):
        violations.append(f"{where}.kind must be 'http' or 'scripted', got {kind!r}")
    spec = BackendSpec(
        kind=kind,
        base_url=raw.get("base_url", ""),
        model=raw.get("model", ""),
        api_key=raw.get("api_key"),
        script_path=raw.get("script_path"),
        fallback=raw.get("fallback"),
        seed=raw.get("seed", 0),
    )
    if kind == "http":
        if not spec.base_url:
            violations.append(f"{where}.base_url is required for http backends")
        if not spec.model:
            violations.append(f"{where}.model is required for http backends")
    elif kind == "scripted":
        if not spec.script_path and spec.fallback is None:
            violations.append(
                f"{where} needs script_path or fallback for a scripted backend"
            )
    return spec


def _validate(cfg: RunConfig, violations: list[str]) -> None:
    if not cfg.dataset_path:
        violations.append("dataset_path is required")
    elif not Path(cfg.dataset_path).exists():
        violations.append(f"dataset_path does not exist: {cfg.dataset_path}")
    if cfg.strategy not in STRATEGIES:
        violations.append(f"strategy must be one of {STRATEGIES}, got {cfg.strategy!r}")
    if cfg.total_generation_calls < 1:
        violations.append("total_generation_calls must be >= 1")
    if cfg.max_concepts < 0:
        violations.append("max_concepts must be >= 0")
    if cfg.per_concept:
        if cfg.max_concepts == 0:
            violations.append("per_concept must be empty when max_concepts is 0")
        elif len(cfg.per_concept) > cfg.max_concepts:
            violations.append("per_concept has more entries than max_concepts")
        elif any(n < 1 for n in cfg.per_concept):
            violations.append("per_concept entries must be >= 1")
        elif sum(cfg.per_concept) != cfg.total_generation_calls:
            violations.append("per_concept must sum to total_generation_calls")
    if cfg.temperature < 0:
        violations.append("temperature must be >= 0")
    if cfg.max_tokens < 1:
        violations.append("max_tokens must be >= 1")
    if cfg.parallelism < 1:
        violations.append("parallelism must be >= 1")
    if not cfg.run_id or "/" in cfg.run_id:
        violations.append("run_id must be a non-empty path-safe name")
    if cfg.on_empty_exploration not in ("rs", "error"):
        violations.append("on_empty_exploration must be 'rs' or 'error'")
    for domain, slots in cfg.template_overrides.items():
        for slot, path in slots.items():
            if slot not in ("initial", "subsequent", "generation", "direct"):
                violations.append(
                    f"template_overrides.{domain}.{slot}: unknown template slot"
                )
            elif not Path(path).exists():
                violations.append(
                    f"template_overrides.{domain}.{slot}: file not found: {path}"
                )


def load_config(path: str | Path, overrides: Optional[dict] = None) -> RunConfig:
    """Load and validate a TOML config, applying flag overrides on top.

    Raises ConfigError listing every violation found, not just the first.
    """
    violations: list[str] = []
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config file is not valid TOML: {exc}"]) from None
    raw = _interpolate(raw, violations, "config")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(raw, violations)


def build_config(raw: dict, violations: Optional[list[str]] = None) -> RunConfig:
    """Build a RunConfig from a plain mapping (e.g. parsed TOML)."""
    violations = violations if violations is not None else []
    budget_raw = raw.get("budget", {})
    solver_raw = raw.get("solver", {})
    judge_raw = raw.get("judge")
    cfg = RunConfig(
        dataset_path=raw.get("dataset_path", ""),
        strategy=raw.get("strategy", "guided"),
        total_generation_calls=budget_raw.get(
            "total_generation_calls", raw.get("total_generation_calls", 100)
        ),
        max_concepts=budget_raw.get("max_concepts", raw.get("max_concepts", 4)),
        per_concept=tuple(budget_raw.get("per_concept", raw.get("per_concept", ()))),
        temperature=raw.get("temperature", 1.0),
        max_tokens=raw.get("max_tokens", 1024),
        parallelism=raw.get("parallelism", 8),
        store_root=raw.get("store_root")
        or os.environ.get(STORE_ROOT_ENV)
        or str(Path.cwd() / "runs"),
        run_id=raw.get("run_id", "run"),
        seed=raw.get("seed", 0),
        keep_duplicates=raw.get("keep_duplicates", False),
        on_empty_exploration=raw.get("on_empty_exploration", "rs"),
        template_overrides={
            domain: dict(slots)
            for domain, slots in raw.get("templates", {}).items()
        },
        solver=_backend_spec(solver_raw, "solver", violations) if solver_raw else BackendSpec(),
        judge=_backend_spec(judge_raw, "judge", violations) if judge_raw else None,
    )
    if not solver_raw:
        violations.append("a [solver] section is required")
    _validate(cfg, violations)
    if violations:
        raise ConfigError(violations)
    return cfg


def with_overrides(cfg: RunConfig, **kwargs: Any) -> RunConfig:
    """Return a copy with the given non-None fields replaced, re-validated."""
    updates = {k: v for k, v in kwargs.items() if v is not None}
    new = replace(cfg, **updates)
    violations: list[str] = []
    _validate(new, violations)
    if violations:
        raise ConfigError(violations)
    return new
