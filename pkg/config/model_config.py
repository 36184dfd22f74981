# config/model_config.py

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from modules.errors import ConfigurationError


class EncoderConfig(BaseModel):
    """Hyperparameters of the token encoder.

    BERT-style configs keep `embed_dim == hidden_dim` and one block per layer;
    ALBERT-style configs set `factorized_embedding` (V x E table plus an
    E x H projection) and `share_layers` with `num_hidden_groups` distinct
    block parameter sets, layer i using group floor(i * g / L).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int = Field(default=1000, ge=5)
    embed_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=32, ge=1)
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=2, ge=1)
    ffn_dim: int = Field(default=64, ge=1)
    max_len: int = Field(default=16, ge=2)
    factorized_embedding: bool = False
    share_layers: bool = False
    num_hidden_groups: int = Field(default=1, ge=1)
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_shapes(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        if self.num_hidden_groups > self.layers:
            raise ConfigurationError(
                f"num_hidden_groups {self.num_hidden_groups} exceeds layers {self.layers}")
        if self.share_layers and self.layers % self.num_hidden_groups != 0:
            raise ConfigurationError(
                f"layers {self.layers} is not a multiple of num_hidden_groups {self.num_hidden_groups}")
        if not self.factorized_embedding and self.embed_dim != self.hidden_dim:
            raise ConfigurationError("embed_dim must equal hidden_dim unless factorized_embedding is set")
        return self

    @property
    def block_count(self) -> int:
        """Number of distinct transformer-block parameter sets"""
        return self.num_hidden_groups if self.share_layers else self.layers

    def group_of_layer(self, layer: int) -> int:
        if not self.share_layers:
            return layer
        return (layer * self.num_hidden_groups) // self.layers


class HeadKind(str, Enum):
    CLS = "cls"
    MEAN = "mean"
    MAX = "max"
    CNN = "cnn"


class CNNHeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    blocks: int = Field(default=2, ge=1)
    kernel: int = Field(default=3, ge=1)
    pool_size: int = Field(default=2, ge=1)
    pool_stride: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def check_kernel(self):
        if self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel {self.kernel} must be odd for symmetric same padding")
        return self


class PoolingHeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: HeadKind = HeadKind.MEAN
    cnn: Optional[CNNHeadConfig] = None

    @model_validator(mode="before")
    @classmethod
    def fill_cnn(cls, data):
        if isinstance(data, dict) and HeadKind(data.get('kind', HeadKind.MEAN)) == HeadKind.CNN:
            if data.get('cnn') is None:
                data = {**data, 'cnn': {}}
        return data

    @model_validator(mode="after")
    def check_cnn(self):
        if self.kind != HeadKind.CNN and self.cnn is not None:
            raise ConfigurationError(f"cnn settings given for a '{self.kind.value}' head")
        return self
