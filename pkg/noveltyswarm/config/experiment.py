"""Experiment configuration: schema, loading, hashing and presets"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from noveltyswarm.core.analysis import DEFAULT_LEVELS, SomConfig
from noveltyswarm.core.neuroevo import EvolutionConfig
from noveltyswarm.core.novelty import NoveltyConfig
from noveltyswarm.core.selection import SelectionConfig
from noveltyswarm.core.sim import SimConfig
from noveltyswarm.core.tasks import Characterisation, TaskConfig, TaskKind
from noveltyswarm.utils.errors import ConfigurationError

SCHEMA_VERSION = 1
PRESETS_PATH = Path(__file__).parent / "presets.yaml"


class DensityConfig(BaseModel):
    """Which two descriptor components the density export bins"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    x: int = Field(default=0, ge=0)
    y: int = Field(default=1, ge=0)
    bins: int = Field(default=20, ge=1)


class ExperimentConfig(BaseModel):
    """Everything that determines an experiment's persisted bytes"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: int = Field(default=SCHEMA_VERSION)
    name: str = Field(default="experiment")
    task: TaskKind = Field(default=TaskKind.AGGREGATION)
    characterisation: Characterisation = Field(default=Characterisation.BCMCL)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    evolution: EvolutionConfig = Field(default_factory=EvolutionConfig)
    novelty: NoveltyConfig = Field(default_factory=NoveltyConfig)
    sim: Optional[SimConfig] = Field(default=None, description="Defaults to the task's preset")
    som: SomConfig = Field(default_factory=SomConfig)
    density: DensityConfig = Field(default_factory=DensityConfig)
    trials: int = Field(default=10, ge=1, description="Trials per evaluation")
    posteval_trials: int = Field(default=100, ge=1)
    runs: int = Field(default=30, ge=0)
    master_seed: int = Field(default=0, ge=0)
    complexity_levels: Optional[List[float]] = Field(default=None)
    output_dir: Path = Field(default=Path("runs/experiment"))

    @field_validator("schema_version")
    @classmethod
    def check_schema_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}; expected {SCHEMA_VERSION}")
        return v

    @field_validator("complexity_levels")
    @classmethod
    def check_levels(cls, v):
        if v is not None and any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("complexity_levels must be ascending")
        return v

    @model_validator(mode="after")
    def check_task(self) -> "ExperimentConfig":
        # raises ValueError on an incompatible task/characterisation/sim triple
        width = self.task_config().descriptor_length
        if self.density.x >= width or self.density.y >= width:
            raise ValueError(f"density components must be below the descriptor length {width}")
        return self

    def task_config(self) -> TaskConfig:
        return TaskConfig(task=self.task, characterisation=self.characterisation,
                          sim=self.sim, trials=self.trials)

    @property
    def levels(self) -> List[float]:
        if self.complexity_levels is not None:
            return list(self.complexity_levels)
        return list(DEFAULT_LEVELS[self.task])

    def canonical(self) -> Dict[str, Any]:
        """JSON-ready dump with the task's simulator filled in"""
        data = self.model_dump(mode="json")
        data["sim"] = self.task_config().sim.model_dump(mode="json")
        return data

    def config_hash(self) -> str:
        """SHA-256 of the canonical dump; the output directory is not part of it"""
        data = self.canonical()
        data.pop("output_dir", None)
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def describe_validation_error(error: ValidationError) -> List[str]:
    """One "path: reason" line per offending field"""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return lines


def parse_config(data: Any, output_dir: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping")
    if output_dir is not None:
        data = {**data, "output_dir": str(output_dir)}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError("invalid configuration", describe_validation_error(e)) from e


def load_config(path: Path, output_dir: Optional[Path] = None) -> ExperimentConfig:
    """Load JSON (canonical) or YAML configuration"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"configuration file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot parse {path.name}", [str(e)]) from e
    return parse_config(data, output_dir)


def load_presets() -> Dict[str, Dict[str, Any]]:
    with open(PRESETS_PATH, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)["presets"]


def list_presets() -> List[str]:
    return sorted(load_presets())


def preset(name: str, **overrides: Any) -> ExperimentConfig:
    presets = load_presets()
    if name not in presets:
        raise ConfigurationError(f"unknown preset {name!r}", [f"available: {', '.join(sorted(presets))}"])
    return parse_config({**presets[name], **overrides})
