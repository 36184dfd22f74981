# config/train_config.py

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from config.model_config import HeadKind


class Objective(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class Task(str, Enum):
    STSB = "stsb"
    NLI = "nli"


class AdamSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_lr: float = Field(default=2e-5, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=10, ge=0)
    warmup_fraction: float = Field(default=0.10, ge=0.0, lt=1.0)
    adam: AdamSettings = Field(default_factory=AdamSettings)
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    seed: int = 0
    shuffle: bool = True


class TrainRecipes:
    # Fine-tuning recipes (Static)
    TASK_OBJECTIVE = {
        Task.STSB: Objective.REGRESSION,
        Task.NLI: Objective.CLASSIFICATION
    }
    TASK_BATCH_SIZE = {
        Task.STSB: 32,
        Task.NLI: 16
    }
    TASK_EPOCHS = {
        Task.STSB: 10,
        Task.NLI: 1
    }
    HEAD_LEARNING_RATE = {
        HeadKind.CLS: 3e-5,
        HeadKind.MEAN: 2e-5,
        HeadKind.MAX: 2e-5,
        HeadKind.CNN: 1e-5
    }

    @classmethod
    def for_task(cls, task: Task, head: HeadKind, **overrides) -> TrainConfig:
        """Recipe defaults for a task/head pair, with explicit overrides layered on top"""
        values = {
            'base_lr': cls.HEAD_LEARNING_RATE[head],
            'batch_size': cls.TASK_BATCH_SIZE[task],
            'epochs': cls.TASK_EPOCHS[task],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**values)
