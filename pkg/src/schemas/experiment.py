"""Experiment configuration file (JSON).

Example::

    {
      "schema_version": 1,
      "distribution": {"kind": "dirichlet", "n": 2, "m": 2, "alpha": 0.5, "seed": 7},
      "train": {"total_iters": 16000, "batch_size": 512, "gamma0": 3.0, "menu_size": 32},
      "modes": ["CAAMA", "AmaOnly", "VCG"],
      "output_dir": "runs/dirichlet-2x2",
      "report_formats": ["csv", "json"]
    }
"""
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.config import settings
from src.core.errors import StorageError
from src.schemas.distribution import DistributionSpec
from src.schemas.training import MechanismMode, TrainConfig

SCHEMA_VERSION = 1


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = SCHEMA_VERSION
    distribution: DistributionSpec
    train: TrainConfig = Field(default_factory=TrainConfig)
    modes: list[MechanismMode] = Field(min_length=1)
    output_dir: str = settings.OUTPUT_ROOT
    report_formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"], min_length=1)

    @field_validator("modes")
    @classmethod
    def _unique_modes(cls, modes: list[MechanismMode]) -> list[MechanismMode]:
        if len(set(modes)) != len(modes):
            raise ValueError("modes must not repeat")
        return modes

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment config file.

    Raises:
        StorageError: the file cannot be read.
        pydantic.ValidationError: the document does not match the schema.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"Cannot read experiment config {path}: {exc}") from exc
    return ExperimentConfig.model_validate_json(text)
