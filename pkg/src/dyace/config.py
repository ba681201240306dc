try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    """Process-wide settings read from the environment and .env"""

    app_env: str = "development"
    log_level: str = "INFO"
    log_file: Optional[str] = None
    openai_api_key: Optional[str] = None
    llm_base_url: Optional[str] = None
    llm_model: str = "gpt-4o-mini"

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")


settings = Settings()


class Variant(str, Enum):
    DYACE = "dyace"
    STATIC = "static"
    BLIND = "blind"
    STATIC_BLIND = "static_blind"

    @property
    def is_static(self) -> bool:
        return self in (Variant.STATIC, Variant.STATIC_BLIND)

    @property
    def is_blind(self) -> bool:
        return self in (Variant.BLIND, Variant.STATIC_BLIND)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InstanceSection(_Section):
    path: Path
    format: Literal["taillard", "tsplib", "cvrplib"]
    name: Optional[str] = None
    bks_registry: Optional[Path] = None


class RunSection(_Section):
    variant: Variant = Variant.DYACE
    seed: int
    population_size: int = Field(100, ge=2)
    algorithm_population_size: int = Field(5, ge=1)
    horizon: int = Field(5, ge=1)
    meta_generations: int = Field(30, ge=1)
    total_generations: Optional[int] = None
    # feature extraction needs three generations of look-ahead
    probe_generations: int = Field(30, ge=3)
    rollouts: int = Field(3, ge=1)
    budget: int = Field(300, gt=0)
    offline_search: bool = True
    offline_rollouts: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_generations(self):
        expected = self.horizon * self.meta_generations
        if self.total_generations is None:
            self.total_generations = expected
        elif self.total_generations != expected:
            raise ValueError(
                f"total_generations={self.total_generations} must equal "
                f"horizon x meta_generations = {expected}"
            )
        return self


class ModeWeights(_Section):
    combine: float = Field(0.4, ge=0)
    mutate: float = Field(0.4, ge=0)
    explore: float = Field(0.2, ge=0)

    @model_validator(mode="after")
    def _check_total(self):
        if self.combine + self.mutate + self.explore <= 0:
            raise ValueError("mode weights must not all be zero")
        return self


class Temperatures(_Section):
    combine: float = Field(0.7, ge=0)
    mutate: float = Field(0.7, ge=0)
    explore: float = Field(1.0, ge=0)


class ControllerSection(_Section):
    backend: Literal["scripted", "openai", "replay"] = "scripted"
    replay_trace: Optional[Path] = None
    retries: int = Field(3, ge=0)
    mode_weights: ModeWeights = ModeWeights()
    temperatures: Temperatures = Temperatures()
    max_tokens: int = Field(2048, ge=1)
    request_timeout: float = Field(60.0, gt=0)
    llm_seeding: bool = False
    seed_population: Optional[Path] = None


class LimitsSection(_Section):
    probe_time_limit: float = Field(120.0, gt=0)
    offline_time_limit: float = Field(300.0, gt=0)
    workers: int = Field(1, ge=1)
    record_timings: bool = False


class RunConfig(_Section):
    """Declarative description of one run"""

    instance: InstanceSection
    run: RunSection
    controller: ControllerSection = ControllerSection()
    limits: LimitsSection = LimitsSection()

    @model_validator(mode="after")
    def _check_variant(self):
        if self.controller.backend == "replay" and self.controller.replay_trace is None:
            raise ValueError("replay back end needs controller.replay_trace")
        if self.run.variant.is_static and self.controller.llm_seeding and not self.run.offline_search:
            raise ValueError("llm_seeding has no effect when the static variant skips offline search")
        return self

    @property
    def variant(self) -> Variant:
        return self.run.variant

    @property
    def total_generations(self) -> int:
        return self.run.horizon * self.run.meta_generations

    def to_record(self) -> Dict[str, Any]:
        """JSON-ready view used in trace headers"""
        return self.model_dump(mode="json")


class SuiteCell(_Section):
    instance: Path
    format: Literal["taillard", "tsplib", "cvrplib"]
    variant: Variant
    seeds: List[int] = Field(min_length=1)
    name: Optional[str] = None


class SuiteSpec(_Section):
    """Experiment grid: (instance, variant, seed) cells sharing one base config"""

    config: Path
    output: Path
    workers: int = Field(1, ge=1)
    overrides: Dict[str, Any] = Field(default_factory=dict)
    cells: List[SuiteCell] = Field(min_length=1)

    def expand(self) -> List[Tuple[SuiteCell, int]]:
        return [(cell, seed) for cell in self.cells for seed in cell.seeds]


def _read_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e


def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    candidate = Path(value)
    return str(candidate if candidate.is_absolute() else (base / candidate))


def apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Set dotted keys such as ``run.seed`` on a raw config mapping"""
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return data


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def load_run_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse a TOML run config; relative paths resolve against the file's directory"""
    path = Path(path)
    data = _read_toml(path)
    base = path.parent
    section = data.get("instance", {})
    for key in ("path", "bks_registry"):
        if key in section:
            section[key] = _resolve(base, section[key])
    controller = data.get("controller", {})
    for key in ("replay_trace", "seed_population"):
        if key in controller:
            controller[key] = _resolve(base, controller[key])
    return build_run_config(apply_overrides(data, overrides or {}))


def load_suite(path: Path) -> SuiteSpec:
    path = Path(path)
    data = _read_toml(path)
    base = path.parent
    for key in ("config", "output"):
        if key in data:
            data[key] = _resolve(base, data[key])
    for cell in data.get("cells", []):
        if "instance" in cell:
            cell["instance"] = _resolve(base, cell["instance"])
    try:
        return SuiteSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid suite: {e}") from e
