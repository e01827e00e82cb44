"""
Experiment configuration.

Configurations are validated with pydantic and may be read from YAML or JSON
files. Concurrency is capped by the ``SBITE_THREADS`` environment variable.
"""

import json
import os
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from sbite.errors import ConfigError

EXPERIMENTS = ("zou-model1", "zou-model2", "js04", "js04-q3", "null-coverage", "oracle-bound")
THREADS_ENV = "SBITE_THREADS"

ExperimentId = Literal["zou-model1", "zou-model2", "js04", "js04-q3", "null-coverage", "oracle-bound"]


class ExperimentConfig(BaseModel):
    """
    Monte-Carlo experiment configuration.

    Cells are experiment specific, colon separated strings:
    ``N:sigma`` for the Zou models, ``nonzero:mu`` for js04/js04-q3,
    ``N:Q`` for null-coverage and ``N:Q:nu:s`` for oracle-bound.

    Example:
        >>> ExperimentConfig(experiment="js04", seed=1, cells=["5:7"], replicates=20)
    """
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentId = Field(..., description="Experiment id")
    seed: int = Field(..., ge=0, lt=2 ** 64, description="Master seed")
    replicates: Optional[int] = Field(None, ge=1, description="Replicates per cell (default: per experiment)")
    cells: Optional[List[str]] = Field(None, description="Cells to run (default: the full table)")
    rules: Optional[List[str]] = Field(None, description="Selection rules to run (default: all)")
    nus: Optional[List[float]] = Field(None, description="nu grid of the searches")
    n_lambda: int = Field(50, ge=1, description="Stage-1 lambda grid size")
    stage2_points: int = Field(30, ge=1, description="Stage-2 lambda grid size")
    output: Optional[str] = Field(None, description="Results CSV path")
    threads: Optional[int] = Field(None, ge=1, description="Thread cap (overrides SBITE_THREADS)")

    @field_validator("nus")
    @classmethod
    def _check_nus(cls, value):
        if value is not None:
            if not value:
                raise ValueError("nu grid is empty")
            if any(v < 1 for v in value):
                raise ValueError("nu values must be >= 1")
        return value

    @field_validator("cells")
    @classmethod
    def _check_cells(cls, value):
        if value is not None and not value:
            raise ValueError("cell list is empty")
        return value


def build_config(**values) -> ExperimentConfig:
    """Validate keyword values into an ExperimentConfig, raising ConfigError"""
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment configuration:\n{e}") from e


def load_config(path, **overrides) -> ExperimentConfig:
    """
    Read an experiment configuration from a YAML or JSON file.

    Keyword overrides that are not None replace file values.

    Raises:
        ConfigError: if the file is missing, unreadable or invalid
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.suffix.lower() == ".json":
                values = json.load(f)
            else:
                values = yaml.safe_load(f) or {}
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"config {path} must hold a mapping")

    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(**values)


def get_thread_count(default: Optional[int] = None) -> int:
    """Thread cap from SBITE_THREADS, else ``default``, else the CPU count"""
    raw = os.getenv(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
        return value
    if default is not None:
        return default
    return os.cpu_count() or 1
