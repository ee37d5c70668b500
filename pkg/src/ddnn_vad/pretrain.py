"""Denoising greedy layer-wise pre-training.

Level ``l`` trains an encoder/decoder pair that maps the noisy representation
``x^(l-1)`` (raw noisy features pushed through the already trained noisy
encoders) onto the clean representation ``x~^(l-1)`` (raw clean features
pushed through an accompanying clean-to-clean encoder stack).  Before level
``l > 1`` the clean stack is grown by one level, trained as a plain
autoencoder on its own input (or as a CD-1 RBM).  Only the noisy encoders
survive into the classifier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError, ShapeError
from .network import (STAGE_CHECKPOINT, DdnnModel, LayerParams, autoencoder_grad, init_layer,
                      layer_forward, logistic, sgd_step)

logger = logging.getLogger(__name__)

# rng stream tags, so each parameter block has its own reproducible stream
_NOISY, _CLEAN, _SHUFFLE, _HEAD, _GIBBS = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class PretrainConfig:
    layer_sizes: tuple = (54, 7, 7)
    learning_rate: float = 0.004
    max_epochs: int = 200
    batch_size: int = 512
    seed: int = 0
    clean_method: str = "autoencoder"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if not self.layer_sizes or any(s <= 0 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.max_epochs < 0 or self.batch_size <= 0:
            raise ConfigError("max_epochs must be >= 0 and batch_size > 0")
        if self.clean_method not in ("autoencoder", "cd1"):
            raise ConfigError(f"clean_method must be 'autoencoder' or 'cd1', got {self.clean_method!r}")

    @property
    def depth(self) -> int:
        return len(self.layer_sizes)


@dataclass
class PretrainState:
    """Parameter stacks of both paths plus per-level training curves.

    ``events`` records every level trained, in order, as ``("noisy", l)`` or
    ``("clean", l)``.
    """

    noisy_path: list = field(default_factory=list)
    clean_path: list = field(default_factory=list)
    noisy_losses: list = field(default_factory=list)
    clean_losses: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def level(self) -> int:
        return len(self.noisy_path)


def _rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng((seed,) + tags)


def _propagate(layers, x, upto: int, which: str) -> np.ndarray:
    if upto < 0 or upto > len(layers):
        raise DataError(f"{which} path has {len(layers)} trained levels, asked for {upto}")
    h = np.asarray(x, dtype=np.float64)
    for layer in layers[:upto]:
        h = layer_forward(layer, h)
    return h


def propagate_noisy(state: PretrainState, x0, upto: Optional[int] = None) -> np.ndarray:
    """Push raw noisy features through the first ``upto`` noisy encoders."""
    return _propagate(state.noisy_path, x0, state.level if upto is None else upto, "noisy")


def propagate_clean(state: PretrainState, x0, upto: Optional[int] = None) -> np.ndarray:
    """Push raw clean features through the first ``upto`` clean encoders."""
    n = len(state.clean_path)
    return _propagate(state.clean_path, x0, n if upto is None else upto, "clean")


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; the last one may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_autoencoder(inputs, targets, n_hidden: int, config: PretrainConfig, *tags):
    """Minibatch SGD on the reconstruction loss of ``targets`` from ``inputs``.

    Returns ``(encoder, decoder, epoch_losses)`` where each epoch loss is the
    mean per-frame loss seen during that epoch.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise DataError("no frames to pre-train on")
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    init = _rng(config.seed, *tags)
    enc = init_layer(inputs.shape[1], n_hidden, init)
    dec = init_layer(n_hidden, targets.shape[1], init)
    shuffle = _rng(config.seed, _SHUFFLE, *tags)
    losses = []
    for epoch in range(config.max_epochs):
        total = 0.0
        for idx in iterate_minibatches(inputs.shape[0], config.batch_size, shuffle):
            g_enc, g_dec, loss = autoencoder_grad(enc, dec, inputs[idx], targets[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite reconstruction loss at epoch {epoch} ({tags})")
            enc, dec = sgd_step([enc, dec], [g_enc, g_dec], config.learning_rate)
            total += loss * len(idx)
        losses.append(total / inputs.shape[0])
    if not (enc.is_finite() and dec.is_finite()):
        raise NumericalError(f"non-finite parameters after pre-training ({tags})")
    return enc, dec, np.array(losses)


def pretrain_level(state: PretrainState, noisy, clean, config: PretrainConfig) -> PretrainState:
    """Train the next noisy encoder to reconstruct clean targets at the same depth."""
    level = state.level + 1
    if level > config.depth:
        raise ConfigError(f"all {config.depth} levels are already trained")
    if len(state.clean_path) != level - 1:
        raise DataError(
            f"level {level} needs {level - 1} clean levels, have {len(state.clean_path)}")
    x = propagate_noisy(state, noisy, level - 1)
    t = propagate_clean(state, clean, level - 1)
    enc, _, losses = train_autoencoder(x, t, config.layer_sizes[level - 1], config, _NOISY, level)
    logger.info("noisy level %d: loss %.4f -> %.4f", level,
                losses[0] if len(losses) else float("nan"),
                losses[-1] if len(losses) else float("nan"))
    return PretrainState(state.noisy_path + [enc], list(state.clean_path),
                         state.noisy_losses + [losses], list(state.clean_losses),
                         state.events + [("noisy", level)])


def pretrain_clean_level(state: PretrainState, clean, config: PretrainConfig,
                         method: Optional[str] = None) -> PretrainState:
    """Grow the clean-to-clean stack by one level (autoencoder or CD-1 RBM)."""
    method = method or config.clean_method
    level = len(state.clean_path) + 1
    if level >= config.depth:
        raise ConfigError(f"clean path never needs more than {config.depth - 1} levels")
    t = propagate_clean(state, clean, level - 1)
    n_hidden = config.layer_sizes[level - 1]
    if method == "autoencoder":
        enc, _, losses = train_autoencoder(t, t, n_hidden, config, _CLEAN, level)
    elif method == "cd1":
        rbm, losses = train_rbm(t, n_hidden, config, _CLEAN, level)
        enc = rbm.encoder
    else:
        raise ConfigError(f"unknown clean-path method {method!r}")
    return PretrainState(list(state.noisy_path), state.clean_path + [enc],
                         list(state.noisy_losses), state.clean_losses + [losses],
                         state.events + [("clean", level)])


def run_pretraining(noisy, clean, config: PretrainConfig = PretrainConfig(),
                    checkpoint_dir=None, norm_stats=None) -> PretrainState:
    """Full denoising layer-wise pre-training over ``config.depth`` levels.

    ``noisy`` and ``clean`` are row-aligned [0, 1] feature matrices.  If
    ``checkpoint_dir`` is given, the noisy encoders are saved after each level
    as ``level<l>.ddnn``.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape:
        raise ShapeError(f"noisy {noisy.shape} and clean {clean.shape} features are not aligned")
    state = PretrainState()
    for level in range(1, config.depth + 1):
        if level > 1:
            state = pretrain_clean_level(state, clean, config)
        state = pretrain_level(state, noisy, clean, config)
        if checkpoint_dir is not None:
            save_checkpoint(state, checkpoint_dir, config.seed, norm_stats)
    return state


def save_checkpoint(state: PretrainState, directory, seed: int = 0, norm_stats=None) -> Path:
    from .network import save_model

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"level{state.level}.ddnn"
    model = DdnnModel([l.copy() for l in state.noisy_path], None, norm_stats, seed,
                      STAGE_CHECKPOINT, state.level)
    save_model(model, path)
    return path


# --- contrastive divergence ----------------------------------------------------

@dataclass
class RBM:
    """Bernoulli-hidden RBM with real-valued visible units in [0, 1]."""

    weights: np.ndarray
    hidden_bias: np.ndarray
    visible_bias: np.ndarray

    @property
    def encoder(self) -> LayerParams:
        return LayerParams(self.weights.copy(), self.hidden_bias.copy())

    def hidden_probs(self, v):
        return logistic(np.asarray(v, dtype=np.float64) @ self.weights.T + self.hidden_bias)

    def visible_probs(self, h):
        return logistic(np.asarray(h, dtype=np.float64) @ self.weights + self.visible_bias)

    def free_energy(self, v):
        v = np.asarray(v, dtype=np.float64)
        act = v @ self.weights.T + self.hidden_bias
        return -(v @ self.visible_bias) - np.sum(np.logaddexp(0.0, act), axis=-1)

    def reconstruct(self, v):
        return self.visible_probs(self.hidden_probs(v))


def cd1_update(rbm: RBM, v0: np.ndarray, learning_rate: float, rng: np.random.Generator):
    """One CD-1 step on a batch; returns the updated RBM and squared reconstruction error."""
    h0 = rbm.hidden_probs(v0)
    h_sample = (rng.random(h0.shape) < h0).astype(np.float64)
    v1 = rbm.visible_probs(h_sample)
    h1 = rbm.hidden_probs(v1)
    n = v0.shape[0]
    d_w = (h0.T @ v0 - h1.T @ v1) / n
    d_bh = (h0 - h1).mean(axis=0)
    d_bv = (v0 - v1).mean(axis=0)
    new = RBM(rbm.weights + learning_rate * d_w, rbm.hidden_bias + learning_rate * d_bh,
              rbm.visible_bias + learning_rate * d_bv)
    return new, float(np.mean(np.sum((v0 - v1) ** 2, axis=1)))


def train_rbm(data, n_hidden: int, config: PretrainConfig, *tags,
              learning_rate: Optional[float] = None, epochs: Optional[int] = None):
    """CD-1 training; returns ``(rbm, epoch_reconstruction_errors)``."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise DataError("no frames to train the RBM on")
    lr = config.learning_rate if learning_rate is None else learning_rate
    epochs = config.max_epochs if epochs is None else epochs
    init = init_layer(data.shape[1], n_hidden, _rng(config.seed, _GIBBS, 0, *tags))
    rbm = RBM(init.weights, init.bias, np.zeros(data.shape[1]))
    shuffle = _rng(config.seed, _SHUFFLE, _GIBBS, *tags)
    gibbs = _rng(config.seed, _GIBBS, 1, *tags)
    errors = []
    for epoch in range(epochs):
        total = 0.0
        for idx in iterate_minibatches(data.shape[0], config.batch_size, shuffle):
            rbm, err = cd1_update(rbm, data[idx], lr, gibbs)
            total += err * len(idx)
        if not np.isfinite(total):
            raise NumericalError(f"non-finite RBM reconstruction error at epoch {epoch}")
        errors.append(total / data.shape[0])
    return rbm, np.array(errors)


def cd1_pretrain_level(frames, n_hidden: int, config: PretrainConfig, level: int = 1) -> LayerParams:
    """Train one RBM with CD-1 and return its visible-to-hidden layer."""
    rbm, _ = train_rbm(frames, n_hidden, config, _NOISY, level)
    return rbm.encoder


def run_dbn_pretraining(noisy, config: PretrainConfig = PretrainConfig()) -> PretrainState:
    """Baseline: stack CD-1 RBMs on the noisy features alone (no clean targets)."""
    state = PretrainState()
    x = np.asarray(noisy, dtype=np.float64)
    for level in range(1, config.depth + 1):
        rbm, errors = train_rbm(x, config.layer_sizes[level - 1], config, _NOISY, level)
        state = PretrainState(state.noisy_path + [rbm.encoder], [], state.noisy_losses + [errors],
                              [], state.events + [("noisy", level)])
        x = rbm.hidden_probs(x)
    return state

