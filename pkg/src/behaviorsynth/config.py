"""Run configuration: one JSON document, overridable by dotted paths."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .autoencoder import AutoencoderConfig
from .errors import BehaviorSynthError
from .generation.providers import ProviderConfig
from .ingest import FixtureSpec


class ConfigError(BehaviorSynthError):
    pass


@dataclass
class Paths:
    dictionary: str | None = None
    dataset: str | None = None
    out_dir: str = "runs/latest"


@dataclass
class SppcSettings:
    method: str = "sppc-kfold"
    rho: float = 0.5
    k: int = 5
    force: bool = False
    n_jobs: int = 1
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)


@dataclass
class GenerationSettings:
    previous_env: str = "spring"
    new_env: str = "winter"
    rounds: int = 2
    token_budget: float = 8000
    allow_violations: bool = False
    provider: ProviderConfig = field(default_factory=ProviderConfig)


@dataclass
class EvalSettings:
    enabled: bool = True
    rho_grid: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    methods: tuple[str, ...] = ("full", "similarity", "sppc-kfold")
    top_k: int = 50
    train_fraction: float = 0.8


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    fixture: FixtureSpec | None = field(default_factory=FixtureSpec)
    sppc: SppcSettings = field(default_factory=SppcSettings)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seed: int = 0
    log_level: str = "INFO"

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        data = self.to_dict()
        for dotted, value in overrides.items():
            set_dotted(data, dotted, value)
        return RunConfig.from_dict(data)

    def validate_paths(self, need_dataset: bool = False) -> None:
        for name in ("dictionary", "dataset"):
            p = getattr(self.paths, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} path does not exist: {p}")
        if need_dataset and self.paths.dataset is None and self.fixture is None:
            raise ConfigError("either paths.dataset or a fixture spec is required")


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        if not isinstance(node[p], dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section")
        node = node[p]
    node[parts[-1]] = value


def _build(cls, data, where: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        path = f"{where}.{name}" if where else name
        if sub is not None:
            kwargs[name] = _build(sub, value, path)
        elif name in _TUPLE_FIELDS.get(cls, ()) and value is not None:
            kwargs[name] = tuple(value) if isinstance(value, list) else value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, BehaviorSynthError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from None


_NESTED = {
    (RunConfig, "paths"): Paths,
    (RunConfig, "fixture"): FixtureSpec,
    (RunConfig, "sppc"): SppcSettings,
    (RunConfig, "generation"): GenerationSettings,
    (RunConfig, "eval"): EvalSettings,
    (SppcSettings, "autoencoder"): AutoencoderConfig,
    (GenerationSettings, "provider"): ProviderConfig,
}
_TUPLE_FIELDS = {
    EvalSettings: ("rho_grid", "methods"),
    ProviderConfig: ("mock_script",),
    FixtureSpec: ("copies_per_pattern",),
}
