"""Classification network assembly, supervised fine-tuning and frame decisions."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError, ShapeError
from .network import (STAGE_ASSEMBLED, STAGE_FINETUNED, DdnnModel, classifier_grad, init_layer,
                      sgd_step)
from .pretrain import _HEAD, _SHUFFLE, PretrainState, _rng, iterate_minibatches

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass(frozen=True)
class FinetuneConfig:
    learning_rate: float = 0.005
    max_epochs: int = 130
    batch_size: int = 512
    seed: int = 0
    patience: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.max_epochs < 0 or self.batch_size <= 0:
            raise ConfigError("max_epochs must be >= 0 and batch_size > 0")
        if self.patience is not None and self.patience <= 0:
            raise ConfigError("patience must be positive when set")


def assemble_classifier(state: PretrainState, seed: int = 0, depth: Optional[int] = None,
                        norm_stats=None) -> DdnnModel:
    """Stack copies of the noisy encoders and put a fresh logistic unit on top.

    Decoders and the clean path are not carried over.
    """
    if not state.noisy_path:
        raise DataError("pre-training has not produced any encoder")
    if depth is not None and state.level != depth:
        raise DataError(f"pre-training finished {state.level} of {depth} levels")
    encoders = [layer.copy() for layer in state.noisy_path]
    head = init_layer(encoders[-1].n_out, 1, _rng(seed, _HEAD))
    return DdnnModel(encoders, head, norm_stats, seed, STAGE_ASSEMBLED, len(encoders))


def random_classifier(n_features: int, layer_sizes, seed: int = 0, norm_stats=None) -> DdnnModel:
    """Same architecture as an assembled model, but every layer randomly initialised."""
    rng = _rng(seed, _HEAD, 1)
    widths = [n_features] + list(layer_sizes)
    encoders = [init_layer(widths[k], widths[k + 1], rng) for k in range(len(layer_sizes))]
    head = init_layer(widths[-1], 1, _rng(seed, _HEAD))
    return DdnnModel(encoders, head, norm_stats, seed, STAGE_ASSEMBLED, 0)


def predict_proba(model: DdnnModel, features) -> np.ndarray:
    if model.classifier is None:
        raise DataError("model has no classifier head")
    return model.predict_proba(features)


def decide(scores) -> np.ndarray:
    """Speech (1) iff score >= 0.5."""
    return (np.asarray(scores) >= THRESHOLD).astype(np.int64)


def predict_frame(model: DdnnModel, features):
    """Score and hard decision for one frame or for each row of a matrix."""
    score = predict_proba(model, features)
    return score, decide(score) if np.ndim(score) else int(score >= THRESHOLD)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float


def finetune(model: DdnnModel, features, labels, config: FinetuneConfig = FinetuneConfig(),
             dev_features=None, dev_labels=None):
    """End-to-end minibatch SGD on the classification loss.

    Returns ``(trained_model, log)``; the input model is not modified.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("need a nonempty 2-D training matrix")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} frames but {y.shape[0]} labels")
    if X.shape[1] != model.layers[0].n_in:
        raise ShapeError(f"features have {X.shape[1]} dims, model expects {model.layers[0].n_in}")
    layers = [l.copy() for l in model.layers]
    shuffle = _rng(config.seed, _SHUFFLE, _HEAD)
    log = []
    best, best_layers, stale = -1.0, layers, 0
    for epoch in range(config.max_epochs):
        total = 0.0
        for idx in iterate_minibatches(X.shape[0], config.batch_size, shuffle):
            grads, loss = classifier_grad(layers, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite classification loss at epoch {epoch}")
            layers = sgd_step(layers, grads, config.learning_rate)
            total += loss * len(idx)
        dev_acc = float("nan")
        if dev_features is not None:
            current = model.with_layers(layers)
            dev_acc = accuracy_of(current, dev_features, dev_labels)
        log.append(EpochRecord(epoch + 1, total / X.shape[0], dev_acc))
        if config.patience is not None and dev_features is not None:
            if dev_acc > best:
                best, best_layers, stale = dev_acc, layers, 0
            else:
                stale += 1
                if stale >= config.patience:
                    layers = best_layers
                    break
    if not all(l.is_finite() for l in layers):
        raise NumericalError("non-finite parameters after fine-tuning")
    trained = model.with_layers(layers)
    trained.stage = STAGE_FINETUNED if config.max_epochs > 0 else model.stage
    return trained, log


def accuracy_of(model: DdnnModel, features, labels) -> float:
    decisions = decide(predict_proba(model, features))
    labels = np.asarray(labels).reshape(-1)
    return 100.0 * float(np.mean(decisions == labels))


def write_training_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "dev_accuracy"])
        for rec in log:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.dev_accuracy)])
