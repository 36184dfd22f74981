# modules/encoder.py

import logging
import math
from dataclasses import dataclass, fields
from typing import Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from config.app_config import AppConfig
from config.model_config import EncoderConfig
from modules import numerics as nx
from modules.data_manager import TokenizedBatch
from modules.errors import InputError
from modules.numerics import Tensor

logger = logging.getLogger(__name__)


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...],
                     stddev: float = AppConfig.INIT_STDDEV,
                     bound: float = AppConfig.INIT_TRUNCATION) -> np.ndarray:
    """Normal(0, stddev^2) samples redrawn until they lie within +-bound * stddev"""
    values = rng.normal(0.0, stddev, size=shape)
    outside = np.abs(values) > bound * stddev
    while outside.any():
        values[outside] = rng.normal(0.0, stddev, size=int(outside.sum()))
        outside = np.abs(values) > bound * stddev
    return values


def _weight(rng, *shape) -> Tensor:
    return Tensor(truncated_normal(rng, shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class TransformerBlock:
    """Post-layer-norm self-attention + feed-forward block.

    The key projection has no bias: softmax over keys is invariant to it.
    """
    query_weight: Tensor
    query_bias: Tensor
    key_weight: Tensor
    value_weight: Tensor
    value_bias: Tensor
    output_weight: Tensor
    output_bias: Tensor
    attention_norm_gamma: Tensor
    attention_norm_beta: Tensor
    ffn_in_weight: Tensor
    ffn_in_bias: Tensor
    ffn_out_weight: Tensor
    ffn_out_bias: Tensor
    ffn_norm_gamma: Tensor
    ffn_norm_beta: Tensor

    @classmethod
    def initialize(cls, rng: np.random.Generator, hidden: int, ffn: int) -> "TransformerBlock":
        return cls(
            query_weight=_weight(rng, hidden, hidden), query_bias=_zeros(hidden),
            key_weight=_weight(rng, hidden, hidden),
            value_weight=_weight(rng, hidden, hidden), value_bias=_zeros(hidden),
            output_weight=_weight(rng, hidden, hidden), output_bias=_zeros(hidden),
            attention_norm_gamma=_ones(hidden), attention_norm_beta=_zeros(hidden),
            ffn_in_weight=_weight(rng, hidden, ffn), ffn_in_bias=_zeros(ffn),
            ffn_out_weight=_weight(rng, ffn, hidden), ffn_out_bias=_zeros(hidden),
            ffn_norm_gamma=_ones(hidden), ffn_norm_beta=_zeros(hidden)
        )

    @staticmethod
    def parameter_count(hidden: int, ffn: int) -> int:
        attention = 4 * hidden * hidden + 3 * hidden
        feed_forward = 2 * hidden * ffn + ffn + hidden
        norms = 4 * hidden
        return attention + feed_forward + norms

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            yield f"{prefix}.{f.name}", getattr(self, f.name)

    def attention_probs(self, x: Tensor, key_mask: np.ndarray, heads: int) -> Tuple[Tensor, Tensor]:
        batch, steps, hidden = x.shape
        head_dim = hidden // heads

        def split_heads(t: Tensor) -> Tensor:
            return nx.transpose(nx.reshape(t, (batch, steps, heads, head_dim)), (0, 2, 1, 3))

        query = split_heads(nx.linear(x, self.query_weight, self.query_bias))
        key = split_heads(nx.linear(x, self.key_weight))
        value = split_heads(nx.linear(x, self.value_weight, self.value_bias))
        scores = nx.scale(nx.matmul(query, nx.transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
        visible = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        return nx.softmax(scores, axis=-1, mask=visible), value

    def forward(self, x: Tensor, key_mask: np.ndarray, heads: int, drop) -> Tensor:
        batch, steps, hidden = x.shape
        probs, value = self.attention_probs(x, key_mask, heads)
        context = nx.transpose(nx.matmul(probs, value), (0, 2, 1, 3))
        context = nx.reshape(context, (batch, steps, hidden))
        attended = nx.linear(context, self.output_weight, self.output_bias)
        x = nx.layer_norm(nx.add(x, drop(attended)), self.attention_norm_gamma,
                          self.attention_norm_beta, AppConfig.LAYER_NORM_EPS)
        inner = nx.activation(nx.linear(x, self.ffn_in_weight, self.ffn_in_bias), "gelu")
        projected = nx.linear(inner, self.ffn_out_weight, self.ffn_out_bias)
        return nx.layer_norm(nx.add(x, drop(projected)), self.ffn_norm_gamma,
                             self.ffn_norm_beta, AppConfig.LAYER_NORM_EPS)


class ParamCount(BaseModel):
    embedding: int
    projection: int
    blocks: int
    other: int
    total: int


class Encoder:
    """Token encoder: embeddings (optionally factorized) followed by L transformer layers.

    With `share_layers`, `config.block_count` parameter sets exist and layer i
    runs block `config.group_of_layer(i)`.
    """

    def __init__(self, config: EncoderConfig, token_embedding: Tensor, projection: Optional[Tensor],
                 position_embedding: Tensor, segment_embedding: Tensor,
                 embedding_norm_gamma: Tensor, embedding_norm_beta: Tensor,
                 blocks: List[TransformerBlock]):
        self.config = config
        self.token_embedding = token_embedding
        self.projection = projection
        self.position_embedding = position_embedding
        self.segment_embedding = segment_embedding
        self.embedding_norm_gamma = embedding_norm_gamma
        self.embedding_norm_beta = embedding_norm_beta
        self.blocks = blocks
        self._dropout_rng = np.random.default_rng([config.seed, 1])

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield "token_embedding", self.token_embedding
        if self.projection is not None:
            yield "projection", self.projection
        yield "position_embedding", self.position_embedding
        yield "segment_embedding", self.segment_embedding
        yield "embedding_norm_gamma", self.embedding_norm_gamma
        yield "embedding_norm_beta", self.embedding_norm_beta
        for index, block in enumerate(self.blocks):
            yield from block.named_parameters(f"blocks.{index}")

    def parameter_total(self) -> int:
        return int(np.sum([t.size for _, t in self.named_parameters()]))

    def _dropout(self, training: bool):
        rate = self.config.dropout_rate if training else 0.0
        return lambda t: nx.dropout(t, rate, self._dropout_rng)

    def check_batch(self, batch: TokenizedBatch):
        if batch.steps > self.config.max_len:
            raise InputError(f"sequence length {batch.steps} exceeds max_len {self.config.max_len}")
        if batch.ids.size and (batch.ids.min() < 0 or batch.ids.max() >= self.config.vocab_size):
            raise InputError(f"token id outside [0, {self.config.vocab_size})")

    def embed_tokens(self, batch: TokenizedBatch, training: bool = False) -> Tensor:
        cfg = self.config
        steps = batch.steps
        tokens = nx.embedding(self.token_embedding, batch.ids)
        if self.projection is not None:
            tokens = nx.linear(tokens, self.projection)
        positions = nx.embedding(self.position_embedding, np.broadcast_to(np.arange(steps), batch.ids.shape))
        segment_ids = batch.segments if batch.segments is not None else np.zeros_like(batch.ids)
        segments = nx.embedding(self.segment_embedding, segment_ids)
        summed = nx.add(nx.add(tokens, positions), segments)
        summed = nx.layer_norm(summed, self.embedding_norm_gamma, self.embedding_norm_beta,
                               AppConfig.LAYER_NORM_EPS)
        return self._dropout(training)(summed)

    def encode(self, batch: TokenizedBatch, training: bool = False) -> Tensor:
        """Contextual token embeddings [B, T, H]; position 0 is [CLS]"""
        self.check_batch(batch)
        x = self.embed_tokens(batch, training)
        drop = self._dropout(training)
        for layer in range(self.config.layers):
            block = self.blocks[self.config.group_of_layer(layer)]
            x = block.forward(x, batch.mask, self.config.heads, drop)
        return x


def build_encoder(config: EncoderConfig) -> Encoder:
    """Initialize every weight from a truncated normal (sigma 0.02), biases/betas 0, gammas 1"""
    rng = np.random.default_rng(config.seed)
    hidden = config.hidden_dim
    width = config.embed_dim if config.factorized_embedding else hidden
    token_embedding = _weight(rng, config.vocab_size, width)
    projection = _weight(rng, width, hidden) if config.factorized_embedding else None
    position_embedding = _weight(rng, config.max_len, hidden)
    segment_embedding = _weight(rng, 2, hidden)
    blocks = [TransformerBlock.initialize(rng, hidden, config.ffn_dim) for _ in range(config.block_count)]
    encoder = Encoder(config, token_embedding, projection, position_embedding, segment_embedding,
                      _ones(hidden), _zeros(hidden), blocks)
    logger.debug("Built encoder with %d blocks and %d parameters", len(blocks), encoder.parameter_total())
    return encoder


def param_count(config: EncoderConfig) -> ParamCount:
    hidden = config.hidden_dim
    if config.factorized_embedding:
        embedding = config.vocab_size * config.embed_dim
        projection = config.embed_dim * hidden
    else:
        embedding = config.vocab_size * hidden
        projection = 0
    blocks = config.block_count * TransformerBlock.parameter_count(hidden, config.ffn_dim)
    other = config.max_len * hidden + 2 * hidden + 2 * hidden
    return ParamCount(embedding=embedding, projection=projection, blocks=blocks, other=other,
                      total=embedding + projection + blocks + other)


def encode(encoder: Encoder, batch: TokenizedBatch, training: bool = False) -> Tensor:
    return encoder.encode(batch, training)
