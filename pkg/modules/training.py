# modules/training.py

import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from config.train_config import AdamSettings, Objective, TrainConfig
from modules.data_manager import PairBatch, ensure_parent_dir
from modules.errors import ConfigurationError, ContractError, NumericalError, UndefinedCorrelationError
from modules.evaluation import spearman
from modules.numerics import ComputeTape, Tensor, backward
from modules.siamese import SiameseModel, classification_loss, predict_similarity, regression_loss

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ['kind', 'epoch', 'step', 'lr', 'loss']


def warmup_steps(total_steps: int, warmup_fraction: float = 0.1) -> int:
    """ceil(fraction * total), computed in decimal so 0.1 * 30 gives 3"""
    return math.ceil(Decimal(str(warmup_fraction)) * total_steps)


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.1) -> float:
    """Linear ramp 0 -> base_lr over the first ceil(fraction * total) steps, constant afterwards"""
    if step < 0 or total_steps < 1:
        raise ContractError(f"lr_at needs step >= 0 and total_steps >= 1 (got {step}, {total_steps})")
    ramp = warmup_steps(total_steps, warmup_fraction)
    if ramp == 0 or step >= ramp:
        return base_lr
    return base_lr * step / ramp


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Optional[np.ndarray]],
              state: OptimizerState, lr: float, settings: AdamSettings = AdamSettings()):
    """One bias-corrected Adam update in place: theta -= lr * m_hat / (sqrt(v_hat) + eps).

    Parameters whose gradient is None are left untouched.
    """
    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ContractError(f"gradient for {name} shaped {grad.shape}, parameter {param.shape}")
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= settings.beta1
        m += (1.0 - settings.beta1) * grad
        v *= settings.beta2
        v += (1.0 - settings.beta2) * grad * grad
        m_hat = m / (1.0 - settings.beta1 ** t)
        v_hat = v / (1.0 - settings.beta2 ** t)
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + settings.eps)).astype(param.dtype)


def clip_grad_norm(grads: Dict[str, Optional[np.ndarray]], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values() if g is not None))
    if norm > max_norm:
        factor = max_norm / norm
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * factor
    return norm


class LossRecord(BaseModel):
    kind: str
    epoch: int
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    model: SiameseModel
    epoch_losses: List[float]
    records: List[LossRecord]
    dev_spearman: List[float] = field(default_factory=list)


class Trainer:
    """Runs epochs x ceil(N / batch) Adam steps with linear warmup on one model"""

    def __init__(self, model: SiameseModel, objective: Objective, config: TrainConfig):
        self.model = model
        self.objective = Objective(objective)
        self.config = config
        self.state = OptimizerState()
        self.params = dict(model.named_parameters())

    def check_dataset(self, dataset: PairBatch):
        if self.objective == Objective.REGRESSION and dataset.scores is None:
            raise ConfigurationError("Regression training needs scored pairs")
        if self.objective == Objective.CLASSIFICATION:
            if dataset.labels is None:
                raise ConfigurationError("Classification training needs labeled pairs")
            if self.model.classifier is None:
                raise ConfigurationError("Classification training needs a model with a classifier")

    def loss(self, batch: PairBatch) -> Tensor:
        if self.objective == Objective.REGRESSION:
            return regression_loss(self.model, batch, training=True)
        return classification_loss(self.model, batch, training=True)

    def step(self, batch: PairBatch, lr: float) -> float:
        self.model.zero_grad()
        with ComputeTape() as tape:
            loss = self.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"Training loss diverged at step {self.state.step + 1}")
        backward(loss, tape)
        grads = {name: p.grad for name, p in self.params.items()}
        if self.config.max_grad_norm is not None:
            clip_grad_norm(grads, self.config.max_grad_norm)
        adam_step(self.params, grads, self.state, lr, self.config.adam)
        return value

    def run(self, dataset: PairBatch, dev: Optional[PairBatch] = None,
            on_record: Optional[Callable[[LossRecord], None]] = None) -> TrainResult:
        self.check_dataset(dataset)
        cfg = self.config
        steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
        total_steps = cfg.epochs * steps_per_epoch
        rng = np.random.default_rng(cfg.seed)
        records, epoch_losses, dev_scores = [], [], []
        logger.info("Training %s for %d epochs, %d steps (warmup %d)", self.objective.value, cfg.epochs,
                    total_steps, warmup_steps(total_steps, cfg.warmup_fraction) if total_steps else 0)

        global_step = 0
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset)) if cfg.shuffle else np.arange(len(dataset))
            losses, sizes = [], []
            lr = 0.0
            for batch in dataset.batches(cfg.batch_size, order):
                global_step += 1
                lr = lr_at(global_step, total_steps, cfg.base_lr, cfg.warmup_fraction)
                value = self.step(batch, lr)
                losses.append(value)
                sizes.append(len(batch))
                record = LossRecord(kind="step", epoch=epoch, step=global_step, lr=lr, loss=value)
                records.append(record)
                if on_record:
                    on_record(record)
            epoch_loss = float(np.average(losses, weights=sizes))
            epoch_losses.append(epoch_loss)
            summary = LossRecord(kind="epoch", epoch=epoch, step=global_step, lr=lr, loss=epoch_loss)
            records.append(summary)
            if on_record:
                on_record(summary)
            message = f"Epoch {epoch}/{cfg.epochs}: mean loss {epoch_loss:.6f}, lr {lr:.3e}"
            if dev is not None and dev.scores is not None:
                try:
                    rho = spearman(predict_similarity(self.model, dev), dev.scores)
                    message += f", dev spearman {rho:.4f}"
                except UndefinedCorrelationError:
                    rho = float("nan")
                    message += ", dev spearman undefined"
                dev_scores.append(rho)
            logger.info(message)
        return TrainResult(self.model, epoch_losses, records, dev_scores)


def train(model: SiameseModel, dataset: PairBatch, objective: Objective, cfg: TrainConfig,
          dev: Optional[PairBatch] = None) -> TrainResult:
    return Trainer(model, objective, cfg).run(dataset, dev)


def write_loss_log(records: List[LossRecord], path: str):
    """CSV with columns kind, epoch, step, lr, loss"""
    ensure_parent_dir(path)
    df = pd.DataFrame([r.model_dump() for r in records], columns=LOSS_LOG_COLUMNS)
    df.to_csv(path, index=False, float_format="%.17g")


def read_loss_log(path: str) -> pd.DataFrame:
    return pd.read_csv(path)
