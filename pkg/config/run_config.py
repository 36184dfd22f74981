# config/run_config.py

import json
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.model_config import EncoderConfig, PoolingHeadConfig
from config.train_config import AdamSettings, Task, TrainConfig, TrainRecipes
from modules.errors import ConfigurationError


class TrainOverrides(BaseModel):
    """Explicit train settings; anything left unset falls back to the task/head recipe"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_lr: Optional[float] = Field(default=None, gt=0.0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    epochs: Optional[int] = Field(default=None, ge=0)
    warmup_fraction: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    adam: Optional[AdamSettings] = None
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    seed: Optional[int] = None
    shuffle: Optional[bool] = None


class DataPaths(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    vocab_path: Optional[str] = None
    lowercase: bool = True


class OutputPaths(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    checkpoint: Optional[str] = None
    loss_log: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    head: PoolingHeadConfig = Field(default_factory=PoolingHeadConfig)
    train: TrainOverrides = Field(default_factory=TrainOverrides)
    data: DataPaths = Field(default_factory=DataPaths)
    output: OutputPaths = Field(default_factory=OutputPaths)

    def train_config(self, task: Task) -> TrainConfig:
        return TrainRecipes.for_task(Task(task), self.head.kind, **self.train.model_dump(exclude_none=True))

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Error reading run config {path}: {str(e)}") from e
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigurationError(f"Error validating run config {path}: {str(e)}") from e
