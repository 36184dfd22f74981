# modules/pooling.py

import logging
from typing import Iterator, List, Tuple

import numpy as np

from config.model_config import CNNHeadConfig, HeadKind, PoolingHeadConfig
from modules import numerics as nx
from modules.encoder import truncated_normal
from modules.errors import DegenerateInputError
from modules.numerics import Tensor

logger = logging.getLogger(__name__)


def _check_rows(mask: np.ndarray, head: str):
    if np.any(np.asarray(mask).sum(axis=1) == 0):
        raise DegenerateInputError(f"{head} pooling: a mask row has no valid position")


def pool_cls(tokens: Tensor) -> Tensor:
    """Position-0 ([CLS]) vector of every row"""
    return nx.select_position(tokens, 0)


def pool_mean(tokens: Tensor, mask: np.ndarray) -> Tensor:
    return nx.masked_mean(tokens, mask)


def pool_max(tokens: Tensor, mask: np.ndarray) -> Tensor:
    """Per-dimension maximum over unmasked positions"""
    _check_rows(mask, "max")
    batch, steps, hidden = tokens.shape
    pooled, _ = nx.max_pool1d(tokens, steps, steps, mask)
    return nx.reshape(pooled, (batch, hidden))


class PoolingHead:
    """Maps token embeddings [B, T, H] to sentence vectors [B, H].

    CLS/mean/max heads are parameter-free. The CNN head runs `blocks` rounds of
    conv1d (H -> H, same padding) -> tanh -> masked max-pool, then a masked mean
    over the positions that remain valid.
    """

    def __init__(self, config: PoolingHeadConfig, hidden_dim: int, conv_layers: List[Tuple[Tensor, Tensor]]):
        self.config = config
        self.hidden_dim = hidden_dim
        self.conv_layers = conv_layers

    @property
    def kind(self) -> HeadKind:
        return self.config.kind

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for index, (kernel, bias) in enumerate(self.conv_layers):
            yield f"conv.{index}.kernel", kernel
            yield f"conv.{index}.bias", bias

    def forward(self, tokens: Tensor, mask: np.ndarray) -> Tensor:
        if self.kind == HeadKind.CLS:
            return pool_cls(tokens)
        if self.kind == HeadKind.MEAN:
            return pool_mean(tokens, mask)
        if self.kind == HeadKind.MAX:
            return pool_max(tokens, mask)
        return pool_cnn(self, tokens, mask)


def pool_cnn(head: PoolingHead, tokens: Tensor, mask: np.ndarray) -> Tensor:
    _check_rows(mask, "cnn")
    cnn: CNNHeadConfig = head.config.cnn
    x, valid = tokens, np.asarray(mask, dtype=np.int8)
    for kernel, bias in head.conv_layers:
        x = nx.apply_mask(x, valid)
        x = nx.activation(nx.conv1d(x, kernel, bias), "tanh")
        x, valid = nx.max_pool1d(x, cnn.pool_size, cnn.pool_stride, valid)
    return nx.masked_mean(x, valid)


def build_head(config: PoolingHeadConfig, hidden_dim: int, seed: int = 0) -> PoolingHead:
    conv_layers = []
    if config.kind == HeadKind.CNN:
        rng = np.random.default_rng([seed, 2])
        for _ in range(config.cnn.blocks):
            kernel = Tensor(truncated_normal(rng, (config.cnn.kernel, hidden_dim, hidden_dim)), requires_grad=True)
            bias = Tensor(np.zeros(hidden_dim), requires_grad=True)
            conv_layers.append((kernel, bias))
    return PoolingHead(config, hidden_dim, conv_layers)
