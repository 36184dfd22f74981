# modules/siamese.py

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from config.app_config import AppConfig
from config.model_config import EncoderConfig, PoolingHeadConfig
from modules import numerics as nx
from modules.data_manager import PairBatch, TokenizedBatch
from modules.encoder import Encoder, build_encoder, truncated_normal
from modules.errors import ConfigurationError
from modules.numerics import Tensor
from modules.pooling import PoolingHead, build_head

logger = logging.getLogger(__name__)

NUM_CLASSES = len(AppConfig.NLI_LABELS)


@dataclass
class Classifier:
    """Affine map from the (u, v, |u - v|) features [3H] to NLI logits [3]"""
    weight: Tensor
    bias: Tensor

    @classmethod
    def initialize(cls, hidden_dim: int, seed: int) -> "Classifier":
        rng = np.random.default_rng([seed, 3])
        weight = Tensor(truncated_normal(rng, (3 * hidden_dim, NUM_CLASSES)), requires_grad=True)
        return cls(weight, Tensor(np.zeros(NUM_CLASSES), requires_grad=True))


@dataclass
class PairFeatures:
    u: Tensor
    v: Tensor
    diff: Tensor

    def concatenated(self) -> Tensor:
        return nx.concat([self.u, self.v, self.diff], axis=-1)


class SiameseModel:
    """One encoder + head shared by both sentences of a pair, plus an optional NLI classifier"""

    def __init__(self, encoder: Encoder, head: PoolingHead, classifier: Optional[Classifier] = None):
        self.encoder = encoder
        self.head = head
        self.classifier = classifier

    @property
    def hidden_dim(self) -> int:
        return self.encoder.config.hidden_dim

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.encoder.named_parameters():
            yield f"encoder.{name}", tensor
        for name, tensor in self.head.named_parameters():
            yield f"head.{name}", tensor
        if self.classifier is not None:
            yield "classifier.weight", self.classifier.weight
            yield "classifier.bias", self.classifier.bias

    def ensure_classifier(self) -> Classifier:
        if self.classifier is None:
            logger.info("Attaching a fresh %d-way classifier", NUM_CLASSES)
            self.classifier = Classifier.initialize(self.hidden_dim, self.encoder.config.seed)
        return self.classifier

    def zero_grad(self):
        for _, tensor in self.named_parameters():
            tensor.zero_grad()


def build_model(encoder_config: EncoderConfig, head_config: PoolingHeadConfig,
                with_classifier: bool = False) -> SiameseModel:
    encoder = build_encoder(encoder_config)
    head = build_head(head_config, encoder_config.hidden_dim, encoder_config.seed)
    classifier = Classifier.initialize(encoder_config.hidden_dim, encoder_config.seed) if with_classifier else None
    return SiameseModel(encoder, head, classifier)


def embed(model: SiameseModel, batch: TokenizedBatch, training: bool = False) -> Tensor:
    """Sentence vectors [B, H]: head(encode(batch))"""
    tokens = model.encoder.encode(batch, training)
    return model.head.forward(tokens, batch.mask)


def embed_pair(model: SiameseModel, batch: PairBatch, training: bool = False) -> Tuple[Tensor, Tensor]:
    return embed(model, batch.left, training), embed(model, batch.right, training)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    return nx.cosine_similarity(u, v)


def pair_features(u: Tensor, v: Tensor) -> PairFeatures:
    return PairFeatures(u, v, nx.absolute(nx.sub(u, v)))


def regression_loss(model: SiameseModel, batch: PairBatch, training: bool = False) -> Tensor:
    """Mean squared error between cosine(u, v) and score / 5"""
    if batch.scores is None:
        raise ConfigurationError("regression_loss needs scored pairs")
    u, v = embed_pair(model, batch, training)
    target = Tensor(batch.scores / AppConfig.MAX_SCORE, dtype=u.dtype)
    return nx.reduce_mean(nx.square(nx.sub(cosine_similarity(u, v), target)))


def classify_pair(model: SiameseModel, batch: PairBatch, training: bool = False) -> Tensor:
    """Logits [B, 3] from the affine classifier over concat(u, v, |u - v|)"""
    if model.classifier is None:
        raise ConfigurationError("classify_pair needs a model with a classifier")
    u, v = embed_pair(model, batch, training)
    features = pair_features(u, v).concatenated()
    return nx.linear(features, model.classifier.weight, model.classifier.bias)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    return nx.cross_entropy(logits, labels)


def classification_loss(model: SiameseModel, batch: PairBatch, training: bool = False) -> Tensor:
    if batch.labels is None:
        raise ConfigurationError("classification_loss needs labeled pairs")
    return cross_entropy_loss(classify_pair(model, batch, training), batch.labels)


def predict_similarity(model: SiameseModel, batch: PairBatch, batch_size: int = 64) -> np.ndarray:
    """Cosine similarity per pair, float64"""
    predictions = []
    for chunk in batch.batches(batch_size):
        u, v = embed_pair(model, chunk)
        predictions.append(np.asarray(cosine_similarity(u, v).data, dtype=np.float64).reshape(-1))
    return np.concatenate(predictions)


def embed_sentences(model: SiameseModel, batch: TokenizedBatch, batch_size: int = 64) -> np.ndarray:
    vectors = []
    for start in range(0, batch.batch_size, batch_size):
        rows = np.arange(start, min(start + batch_size, batch.batch_size))
        vectors.append(embed(model, batch.select(rows)).data)
    return np.concatenate(vectors, axis=0)
