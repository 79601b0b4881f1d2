"""Flat JSON pipeline configuration with per-flag overrides."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .backend import HttpChatBackend, MockBackend
from .errors import ConfigError

BACKEND_ROLES = ("teacher", "reasoner", "predictor", "reward", "judge")


@dataclass
class BackendConfig:
    type: str = "mock"  # "mock" or "http"
    base_url: str = ""
    model: str = ""
    api_key_env: str = "REVIEWREC_API_KEY"
    script_path: str = ""
    temperature: float = 0.0
    max_tokens: int = 512

    def build(self, config_dir: Path):
        if self.type == "mock":
            if not self.script_path:
                raise ConfigError("mock backend needs script_path", ["script_path"])
            path = Path(self.script_path)
            if not path.is_absolute():
                path = config_dir / path
            return MockBackend.from_script_file(path)
        if self.type == "http":
            if not self.base_url or not self.model:
                raise ConfigError(
                    "http backend needs base_url and model", ["base_url", "model"]
                )
            return HttpChatBackend(
                base_url=self.base_url, model=self.model, api_key_env=self.api_key_env
            )
        raise ConfigError(f"unknown backend type {self.type!r}", ["type"])


@dataclass
class PipelineConfig:
    data_path: str = ""
    field_map: dict = field(default_factory=dict)
    domain_noun: str = "item"
    kcore_k: int = 5
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    max_history: int = 10
    backends: dict = field(default_factory=dict)  # role -> BackendConfig
    tau: float = 0.1
    max_filter_iters: int = 5
    unhinted_iters: int = 1
    n_instruct: int = 12000
    n_reward: int = 8000
    seed: int = 0
    workers: int = 4
    output_dir: str = "out"
    config_dir: str = "."

    @classmethod
    def from_dict(cls, data: dict, config_dir: str = ".") -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "config_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(
                f"unknown config fields: {sorted(unknown)}", sorted(unknown)
            )
        backends = {
            role: BackendConfig(**spec)
            for role, spec in (data.get("backends") or {}).items()
        }
        fields = {k: v for k, v in data.items() if k != "backends"}
        cfg = cls(**fields, backends=backends, config_dir=config_dir)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, config_dir=str(path.parent))

    def validate(self):
        bad = []
        if not (0 < self.valid_fraction and 0 < self.test_fraction):
            bad.append("valid_fraction/test_fraction")
        if self.valid_fraction + self.test_fraction >= 1:
            bad.append("valid_fraction+test_fraction")
        if self.kcore_k < 1:
            bad.append("kcore_k")
        if self.max_history < 1:
            bad.append("max_history")
        if not math.isfinite(self.tau):
            bad.append("tau")
        if self.max_filter_iters < 1:
            bad.append("max_filter_iters")
        if self.workers < 1:
            bad.append("workers")
        unknown_roles = set(self.backends) - set(BACKEND_ROLES)
        if unknown_roles:
            bad.append(f"backends ({sorted(unknown_roles)})")
        if bad:
            raise ConfigError(f"invalid config fields: {bad}", bad)

    def backend(self, role: str):
        if role not in self.backends:
            raise ConfigError(f"no backend configured for role {role!r}", [role])
        return self.backends[role].build(Path(self.config_dir))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("config_dir")
        return doc

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_preset(name: str) -> dict:
    """Shipped per-dataset defaults (field maps and acceptance thresholds)."""
    from importlib import resources

    path = resources.files("reviewrec.presets").joinpath(f"{name}.json")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"no preset named {name!r}") from exc
