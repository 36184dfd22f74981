# modules/evaluation.py

import json
import logging
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, computed_field
from scipy.stats import rankdata

from config.app_config import AppConfig
from modules.data_manager import SentencePair, Vocab, encode_pairs, ensure_parent_dir
from modules.errors import ContractError, DataError, UndefinedCorrelationError
from modules.siamese import SiameseModel, predict_similarity

logger = logging.getLogger(__name__)

CENT = Decimal("0.01")


def rank(values: Sequence[float]) -> np.ndarray:
    """1-based ranks, ties share the average of the ranks they span"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("rank needs at least one value")
    return rankdata(values, method="average")


def _check_pair(x: np.ndarray, y: np.ndarray):
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ContractError(f"correlation needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ContractError("correlation needs at least 2 points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation is undefined for a constant input")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return float(np.clip(r, -1.0, 1.0))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_pair(x, y)
    return pearson(rank(x), rank(y))


def render_correlation(value: float) -> str:
    """value x 100 to two decimals, round half to even; a signed zero renders as 0.00"""
    quantized = Decimal(str(value * 100)).quantize(CENT, rounding=ROUND_HALF_EVEN)
    if quantized.is_zero():
        quantized = quantized.copy_abs()
    return str(quantized)


class EvalReport(BaseModel):
    spearman: float = Field(ge=-1.0, le=1.0)
    pearson: float = Field(ge=-1.0, le=1.0)
    n_pairs: int = Field(ge=2)

    @computed_field
    @property
    def rendered(self) -> str:
        return f"{render_correlation(self.spearman)} ({render_correlation(self.pearson)})"

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True)


class SuiteReport(BaseModel):
    """Per-task reports with a macro-averaged row"""
    tasks: Dict[str, EvalReport]

    @property
    def average_spearman(self) -> float:
        return float(np.mean([r.spearman for r in self.tasks.values()]))

    @property
    def average_pearson(self) -> float:
        return float(np.mean([r.pearson for r in self.tasks.values()]))

    @property
    def rendered_average(self) -> str:
        return f"{render_correlation(self.average_spearman)} ({render_correlation(self.average_pearson)})"

    def to_frame(self) -> pd.DataFrame:
        rows = [{'task': name, 'spearman': r.spearman, 'pearson': r.pearson,
                 'n_pairs': r.n_pairs, 'rendered': r.rendered} for name, r in self.tasks.items()]
        rows.append({'task': AppConfig.REPORT_AVERAGE_LABEL, 'spearman': self.average_spearman,
                     'pearson': self.average_pearson,
                     'n_pairs': int(sum(r.n_pairs for r in self.tasks.values())),
                     'rendered': self.rendered_average})
        return pd.DataFrame(rows, columns=['task', 'spearman', 'pearson', 'n_pairs', 'rendered'])

    def to_json(self) -> str:
        payload = {name: r.model_dump() for name, r in self.tasks.items()}
        payload[AppConfig.REPORT_AVERAGE_LABEL] = {
            'spearman': self.average_spearman,
            'pearson': self.average_pearson,
            'rendered': self.rendered_average
        }
        return json.dumps(payload, indent=2)


def evaluate_predictions(predictions: Sequence[float], gold: Sequence[float]) -> EvalReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    return EvalReport(spearman=spearman(predictions, gold), pearson=pearson(predictions, gold),
                      n_pairs=int(gold.size))


def evaluate_sts(model: SiameseModel, pairs: List[SentencePair], vocab: Vocab,
                 batch_size: int = 64) -> EvalReport:
    """Cosine similarity of every pair against its gold score"""
    if len(pairs) < 2:
        raise ContractError(f"evaluate_sts needs at least 2 pairs, got {len(pairs)}")
    if any(p.score is None for p in pairs):
        raise DataError("evaluate_sts needs scored pairs")
    dataset = encode_pairs(vocab, pairs, model.encoder.config.max_len)
    predictions = predict_similarity(model, dataset, batch_size)
    report = evaluate_predictions(predictions, dataset.scores)
    logger.info("Evaluated %d pairs: %s", report.n_pairs, report.rendered)
    return report


def evaluate_suite(model: SiameseModel, named_pairs: Mapping[str, List[SentencePair]], vocab: Vocab,
                   batch_size: int = 64) -> SuiteReport:
    return SuiteReport(tasks={name: evaluate_sts(model, pairs, vocab, batch_size)
                              for name, pairs in named_pairs.items()})


def write_report(report, path: str):
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
        f.write("\n")
