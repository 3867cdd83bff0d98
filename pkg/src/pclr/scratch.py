"""Supervised baseline: the same encoder plus a linear head, trained from random init.

Classification uses a two-unit head with categorical cross-entropy; regression a
one-unit head with mean squared error on targets normalized by the training
mean and standard deviation. Training stops once the validation loss has not
improved for ``patience`` epochs and the minimum-validation-loss weights are kept.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamConfig, adam_step, backward
from .autodiff import functional as F
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import DESK_ENCODER, PAPER_ENCODER, EncoderConfig, ModelState, build_model, forward
from .errors import ConfigError, DataError
from .lineval import CLASSIFICATION, REGRESSION, TASK_KINDS, auroc, log_loss, regression_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScratchConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig.from_dict(self.encoder))
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d


PAPER_SCRATCH = ScratchConfig(encoder=PAPER_ENCODER)
DESK_SCRATCH = ScratchConfig(max_epochs=40, encoder=DESK_ENCODER)


def head_for(kind: str) -> str:
    return "linear:2" if kind == CLASSIFICATION else "linear:1"


@dataclass
class ScratchResult:
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    checkpoint: Path
    target_mean: float
    target_std: float


def _loss(model: ModelState, x, y, kind: str, training: bool):
    out = forward(model, x, training, ("head",))["head"]
    if kind == CLASSIFICATION:
        return F.softmax_cross_entropy(out, y.astype(np.int64))
    return F.mean_squared_error(out, y)


def _validation_loss(model: ModelState, x, y, kind: str, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        total += float(_loss(model, xb, yb, kind, training=False).data) * len(xb)
    return total / len(x)


def train_scratch(config: ScratchConfig, task: str, x_train, y_train, x_val, y_val, out_dir) -> ScratchResult:
    """Fit encoder + linear head; writes ``best.ckpt`` and returns the per-epoch history.

    ``x_*`` are prepared ECG arrays ``[N, 4096, 12]``. Batches are reshuffled
    each epoch from ``(seed, epoch)``; a trailing partial batch is kept.
    """
    kind = TASK_KINDS.get(task, task)
    x_train = np.asarray(x_train, dtype=np.float32)
    x_val = np.asarray(x_val, dtype=np.float32)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if len(x_train) == 0 or len(x_val) == 0:
        raise DataError("scratch training needs non-empty training and validation sets")
    mu, sd = 0.0, 1.0
    if kind == REGRESSION:
        mu, sd = float(y_train.mean()), float(y_train.std()) or 1.0
    elif len(np.unique(y_train)) < 2:
        raise DataError("classification training labels contain a single class")
    yt, yv = (y_train - mu) / sd, (y_val - mu) / sd

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "best.ckpt"
    model = build_model(config.encoder, config.seed, head=head_for(kind))
    adam = AdamConfig(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    history, best_val, best_epoch = [], float("inf"), -1
    for epoch in range(config.max_epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            if kind == CLASSIFICATION and len(idx) < 2:
                continue  # batch statistics need at least two rows
            loss = _loss(model, x_train[idx], yt[idx], kind, training=True)
            backward(loss)
            adam_step(model.trainable(), adam)
            losses.append(float(loss.data))
        val = _validation_loss(model, x_val, yv, kind, config.batch_size)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val})
        log.info("scratch epoch %d train %.5f val %.5f", epoch, history[-1]["train_loss"], val)
        model.epoch, model.step_count = epoch + 1, adam.step_count
        if val < best_val:
            best_val, best_epoch = val, epoch
            model.extra = {"task": task, "target_mean": mu, "target_std": sd, "best_epoch": epoch}
            save_checkpoint(model, ckpt)
        elif epoch - best_epoch >= config.patience:
            break
    return ScratchResult(history, best_epoch, best_val, ckpt, mu, sd)


def predict(model: ModelState, x, batch_size: int = 64) -> np.ndarray:
    """Positive-class probability (two-unit head) or target-unit prediction (one-unit head)."""
    outs = []
    for start in range(0, len(x), batch_size):
        outs.append(forward(model, x[start:start + batch_size], False, ("head",))["head"].data.astype(np.float64))
    out = np.concatenate(outs) if outs else np.zeros((0, 1))
    if out.shape[1] == 2:
        shifted = out - out.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p[:, 1] / p.sum(axis=1)
    return out[:, 0] * float(model.extra.get("target_std", 1.0)) + float(model.extra.get("target_mean", 0.0))


def evaluate_scratch(checkpoint, task: str, x_test, y_test) -> dict:
    model = load_checkpoint(checkpoint)
    pred = predict(model, np.asarray(x_test, dtype=np.float32))
    if TASK_KINDS.get(task, task) == REGRESSION:
        return regression_metrics(y_test, pred)
    return {"auroc": auroc(y_test, pred), "log_loss": log_loss(y_test, pred)}
