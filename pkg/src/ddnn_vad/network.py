"""Logistic feed-forward layers, cross-entropy losses and backpropagation.

Everything here works in float64.  Batched inputs are 2-D arrays with one
example per row; 1-D inputs are treated as a batch of one and the result is
squeezed back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .exceptions import DataError, ShapeError
from .features import NormStats

EPS = 1e-7

MAGIC = b"DDNN"
FORMAT_VERSION = 1

STAGE_CHECKPOINT = 0
STAGE_ASSEMBLED = 1
STAGE_FINETUNED = 2


@dataclass
class LayerParams:
    """One affine layer: ``weights`` is (n_out, n_in), ``bias`` is (n_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weights have {self.weights.shape[0]} output rows but bias "
                f"has {self.bias.shape[0]} entries")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias)))

    def __eq__(self, other):
        if not isinstance(other, LayerParams):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))


@dataclass
class ActivationRecord:
    """Cached forward pass: ``inputs[k]`` feeds layer k, ``outputs[k]`` leaves it."""

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def init_layer(n_in: int, n_out: int, rng: np.random.Generator) -> LayerParams:
    """Glorot-uniform weights, zero bias."""
    if n_in <= 0 or n_out <= 0:
        raise ShapeError(f"layer widths must be positive, got {n_in}->{n_out}")
    r = np.sqrt(6.0 / (n_in + n_out))
    return LayerParams(rng.uniform(-r, r, size=(n_out, n_in)), np.zeros(n_out))


def logistic(x):
    """Logistic sigmoid ``1 / (1 + exp(-x))``, overflow-free."""
    return expit(x)


def _as_batch(x, width: int, what: str = "input") -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"{what} must be 1-D or 2-D, got {x.ndim}-D")
    if x.shape[1] != width:
        raise ShapeError(f"{what} width {x.shape[1]} does not match layer input width {width}")
    return x, single


def layer_forward(layer: LayerParams, x) -> np.ndarray:
    """``logistic(W @ x + b)`` for a vector or for each row of a matrix.

    The contraction avoids BLAS so each row's result does not depend on how
    many rows are in the batch; frame-by-frame and batch inference agree
    exactly.  Training uses :func:`forward`, which favours speed.
    """
    xb, single = _as_batch(x, layer.n_in)
    out = logistic(np.einsum("ij,kj->ik", xb, layer.weights) + layer.bias)
    return out[0] if single else out


def forward(layers: Sequence[LayerParams], x) -> ActivationRecord:
    """Propagate through a stack of logistic layers, keeping activations."""
    if not layers:
        raise ShapeError("empty layer stack")
    h, _ = _as_batch(x, layers[0].n_in)
    rec = ActivationRecord()
    for k, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(
                f"layer {k} expects width {layer.n_in}, previous layer gives {h.shape[1]}")
        a = h @ layer.weights.T + layer.bias
        rec.inputs.append(h)
        rec.pre.append(a)
        h = logistic(a)
        rec.outputs.append(h)
    return rec


def reconstruction_loss(target, reconstruction):
    """Summed binary cross-entropy between a [0, 1] target and a reconstruction.

    Works on a single vector (returns a float) or on rows of a matrix (returns
    one loss per row).
    """
    t = np.asarray(target, dtype=np.float64)
    z = np.asarray(reconstruction, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeError(f"target shape {t.shape} != reconstruction shape {z.shape}")
    if np.any(t < 0) or np.any(t > 1):
        raise DataError("reconstruction targets must lie in [0, 1]")
    z = np.clip(z, EPS, 1 - EPS)
    loss = -np.sum(t * np.log(z) + (1 - t) * np.log1p(-z), axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def classification_loss(label, score):
    """Binary cross-entropy with label 1 for speech."""
    y = np.asarray(label, dtype=np.float64)
    p = np.clip(np.asarray(score, dtype=np.float64), EPS, 1 - EPS)
    if y.shape != p.shape:
        raise ShapeError(f"label shape {y.shape} != score shape {p.shape}")
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def _backward(layers, rec: ActivationRecord, delta: np.ndarray) -> list[LayerParams]:
    # delta: dLoss/dpre of the top layer, already divided by batch size
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        grads[k] = LayerParams(delta.T @ rec.inputs[k], delta.sum(axis=0))
        if k > 0:
            h = rec.outputs[k - 1]
            delta = (delta @ layers[k].weights) * h * (1 - h)
    return grads


def autoencoder_grad(encoder: LayerParams, decoder: LayerParams, x, target):
    """Gradient of the reconstruction loss of ``decoder(encoder(x))`` vs ``target``.

    For a batch the loss and gradients are averaged over rows.

    Returns
    -------
    (encoder_grad, decoder_grad, loss)
    """
    if decoder.n_in != encoder.n_out:
        raise ShapeError(
            f"decoder input width {decoder.n_in} != encoder output width {encoder.n_out}")
    xb, _ = _as_batch(x, encoder.n_in)
    tb, _ = _as_batch(target, decoder.n_out, what="target")
    if tb.shape[0] != xb.shape[0]:
        raise ShapeError(f"{xb.shape[0]} inputs but {tb.shape[0]} targets")
    rec = forward([encoder, decoder], xb)
    z = rec.output
    loss = float(np.mean(reconstruction_loss(tb, z)))
    # logistic output + cross-entropy: dL/da = z - t
    delta = (z - tb) / xb.shape[0]
    g_enc, g_dec = _backward([encoder, decoder], rec, delta)
    return g_enc, g_dec, loss


def classifier_grad(layers: Sequence[LayerParams], x, labels):
    """Mean-over-batch gradient of the classification loss for a full stack.

    ``layers`` ends with the single-unit classifier head.

    Returns
    -------
    (grads, loss): one :class:`LayerParams` gradient per layer, and the mean loss.
    """
    if layers[-1].n_out != 1:
        raise ShapeError(f"classifier head must have 1 output, has {layers[-1].n_out}")
    xb, _ = _as_batch(x, layers[0].n_in)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != xb.shape[0]:
        raise ShapeError(f"{xb.shape[0]} inputs but {y.shape[0]} labels")
    if xb.shape[0] == 0:
        raise DataError("empty batch")
    rec = forward(layers, xb)
    p = rec.output[:, 0]
    loss = float(np.mean(classification_loss(y, p)))
    delta = ((p - y) / xb.shape[0])[:, None]
    return _backward(layers, rec, delta), loss


def sgd_step(params: Sequence[LayerParams], grads: Sequence[LayerParams],
             learning_rate: float) -> list[LayerParams]:
    """Return ``p - lr * g`` for each layer; the inputs are left untouched."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter blocks but {len(grads)} gradients")
    out = []
    for p, g in zip(params, grads):
        if p.weights.shape != g.weights.shape or p.bias.shape != g.bias.shape:
            raise ShapeError(
                f"parameter shape {p.weights.shape} does not match gradient {g.weights.shape}")
        out.append(LayerParams(p.weights - learning_rate * g.weights,
                               p.bias - learning_rate * g.bias))
    return out


@dataclass
class DdnnModel:
    """Encoder stack plus an optional single-unit classifier head.

    ``stage`` tells whether this is a layer-wise checkpoint, a freshly
    assembled classifier or a fine-tuned one; ``level`` is the number of
    completed pre-training levels at checkpoint time.
    """

    encoder_layers: list
    classifier: Optional[LayerParams] = None
    norm_stats: Optional[NormStats] = None
    seed: int = 0
    stage: int = STAGE_ASSEMBLED
    level: int = 0

    def __post_init__(self):
        for k in range(1, len(self.encoder_layers)):
            if self.encoder_layers[k].n_in != self.encoder_layers[k - 1].n_out:
                raise ShapeError(
                    f"encoder layer {k} expects width {self.encoder_layers[k].n_in}, "
                    f"layer {k - 1} gives {self.encoder_layers[k - 1].n_out}")
        if self.classifier is not None:
            last = self.encoder_layers[-1].n_out if self.encoder_layers else None
            if last is not None and self.classifier.n_in != last:
                raise ShapeError(
                    f"classifier input width {self.classifier.n_in} != last hidden width {last}")
            if self.classifier.n_out != 1:
                raise ShapeError("classifier head must have exactly one output unit")
        if self.norm_stats is not None and self.encoder_layers:
            if self.norm_stats.minimum.shape[0] != self.encoder_layers[0].n_in:
                raise ShapeError("normalization statistics do not match input width")

    @property
    def layer_sizes(self) -> list[int]:
        """Widths from the input through the last hidden layer."""
        if not self.encoder_layers:
            return []
        return [self.encoder_layers[0].n_in] + [l.n_out for l in self.encoder_layers]

    @property
    def depth(self) -> int:
        return len(self.encoder_layers)

    @property
    def layers(self) -> list[LayerParams]:
        """All layers in forward order, head included when present."""
        return list(self.encoder_layers) + ([self.classifier] if self.classifier is not None else [])

    def with_layers(self, layers: Sequence[LayerParams]) -> "DdnnModel":
        n = len(self.encoder_layers)
        return DdnnModel(list(layers[:n]), layers[n] if len(layers) > n else None,
                         self.norm_stats, self.seed, self.stage, self.level)

    def copy(self) -> "DdnnModel":
        return self.with_layers([l.copy() for l in self.layers])

    def predict_proba(self, x) -> np.ndarray:
        """Speech probability for normalized features (vector or rows)."""
        if self.classifier is None:
            raise DataError("model has no classifier head")
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = layer_forward(layer, h)
        return h[:, 0] if h.ndim == 2 else float(h[0])

    def __eq__(self, other):
        if not isinstance(other, DdnnModel):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)


def to_bytes(model: DdnnModel) -> bytes:
    """Serialize a model into the little-endian binary container."""
    sizes = model.layer_sizes
    parts = [struct.pack("<4sHBBqIBB", MAGIC, FORMAT_VERSION, model.stage, model.level,
                         model.seed, len(model.encoder_layers),
                         model.classifier is not None, model.norm_stats is not None)]
    parts.append(struct.pack(f"<{len(sizes)}I", *sizes))
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    if model.norm_stats is not None:
        d = model.norm_stats.minimum.shape[0]
        parts.append(struct.pack("<I", d))
        parts.append(np.ascontiguousarray(model.norm_stats.minimum, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.norm_stats.maximum, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> DdnnModel:
    """Inverse of :func:`to_bytes`."""
    head = struct.calcsize("<4sHBBqIBB")
    if len(data) < head:
        raise DataError("model file truncated")
    magic, version, stage, level, seed, n_enc, has_head, has_norm = struct.unpack_from(
        "<4sHBBqIBB", data, 0)
    if magic != MAGIC:
        raise DataError(f"not a model file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    off = head
    n_sizes = n_enc + 1 if n_enc else 0
    sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
    off += 4 * n_sizes

    def take(count):
        nonlocal off
        if off + 8 * count > len(data):
            raise DataError("model file truncated")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return arr

    encoders = []
    for k in range(n_enc):
        n_in, n_out = sizes[k], sizes[k + 1]
        w = take(n_in * n_out).reshape(n_out, n_in)
        encoders.append(LayerParams(w, take(n_out)))
    head_layer = None
    if has_head:
        n_in = sizes[-1] if sizes else 0
        head_layer = LayerParams(take(n_in).reshape(1, n_in), take(1))
    norm = None
    if has_norm:
        (d,) = struct.unpack_from("<I", data, off)
        off += 4
        norm = NormStats(take(d), take(d))
    if off != len(data):
        raise DataError(f"{len(data) - off} trailing bytes in model file")
    return DdnnModel(encoders, head_layer, norm, seed, stage, level)


def save_model(model: DdnnModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path) -> DdnnModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return from_bytes(data)
