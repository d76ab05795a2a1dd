"""Black-box classifier interface and a small numpy MLP trained with SGD."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .datasets import Dataset
from .errors import FormatError, InvalidParameter, TrainingDiverged

log = logging.getLogger(__name__)

MODEL_MAGIC = b"CMM1"
MODEL_VERSION = 1


@runtime_checkable
class ClassifierOracle(Protocol):
    """Anything that maps a batch of feature rows to class indices."""

    input_dim: int
    num_classes: int

    def predict(self, X: np.ndarray) -> np.ndarray: ...


def predict(model: ClassifierOracle, features):
    """Predict one row (returns ``int``) or a batch (returns an int array)."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidParameter(
            f"feature length {X.shape[-1]} != model input_dim {model.input_dim}"
        )
    out = np.asarray(model.predict(X), dtype=np.int64)
    return int(out[0]) if single else out


def accuracy(model: ClassifierOracle, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise InvalidParameter("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(model, dataset.X) == dataset.y))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TinyClassifier:
    """Fully connected ReLU network with a linear output layer.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch is
    propagated as ``X @ W + b``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise InvalidParameter("need one bias vector per weight matrix")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidParameter(f"layer {i} has inconsistent shapes")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise InvalidParameter(f"layer {i} fan-in does not match previous layer")
        if self.weights[-1].shape[1] < 2:
            raise InvalidParameter("a classifier needs at least 2 classes")
        self.history: list[dict] = []

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "TinyClassifier":
        """He-normal weights, zero biases."""
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise InvalidParameter(f"bad layer dims {layer_dims}")
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims, layer_dims[1:]):
            ws.append(rng.normal(scale=np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "TinyClassifier":
        return TinyClassifier(self.weights, self.biases)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _forward(self, X):
        acts = [X]
        h = X
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[-1]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return np.argmax(self.logits(X), axis=1)

    def loss_and_grads(self, X, y, *, input_grad=False):
        """Mean cross-entropy and its gradients.

        Returns ``(loss, grads)`` where ``grads`` is ``[dW0, db0, dW1, ...]``;
        with ``input_grad=True`` also returns ``dL/dX`` as a third item.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        acts = self._forward(X)
        n = X.shape[0]
        z = acts[-1] - acts[-1].max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsum - z[np.arange(n), y]))

        delta = softmax(acts[-1])
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i or input_grad:
                delta = delta @ self.weights[i].T
                if i:
                    delta = delta * (acts[i] > 0)
        if input_grad:
            return loss, grads, delta
        return loss, grads

    def __eq__(self, other):
        if not isinstance(other, TinyClassifier):
            return NotImplemented
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    rng_seed: int = 0
    watermark_weight: int = 10
    hidden: tuple[int, ...] = (256, 128)
    # early stop once test accuracy is within this much of the plain baseline
    tolerance: float = 0.01
    baseline_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameter("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidParameter("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidParameter("learning_rate must be positive")
        if self.watermark_weight < 1:
            raise InvalidParameter("watermark_weight must be >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidParameter("momentum must be in [0, 1)")

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


def sgd_epochs(
    model: TinyClassifier,
    X: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    learning_rate: float,
    batch_size: int = 64,
    momentum: float = 0.9,
    rng: np.random.Generator,
    trainable: Sequence[int] | None = None,
    on_epoch=None,
) -> TinyClassifier:
    """Mini-batch SGD with momentum, in place.

    ``trainable`` lists the layer indices to update (default: all).
    ``on_epoch(epoch, loss)`` may return True to stop early.
    """
    layers = range(len(model.weights)) if trainable is None else list(trainable)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    n = X.shape[0]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * len(idx)
            for layer in layers:
                for k in (2 * layer, 2 * layer + 1):
                    velocity[k] *= momentum
                    velocity[k] -= learning_rate * grads[k]
                    params[k] += velocity[k]
        epoch_loss = total / max(n, 1)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        if on_epoch is not None and on_epoch(epoch, epoch_loss):
            break
    return model


def train_from_scratch(
    original: Dataset,
    watermark: Dataset,
    cfg: TrainConfig = TrainConfig(),
    test: Dataset | None = None,
) -> TinyClassifier:
    """Train a fresh MLP on ``original`` plus oversampled ``watermark`` records.

    Each epoch the watermark records appear ``cfg.watermark_weight`` times.
    Training stops early once the watermark set is fully memorised and test
    accuracy is within ``cfg.tolerance`` of ``cfg.baseline_accuracy`` (both a
    test set and a baseline are needed for early stopping).  The per-epoch log
    ends up in ``model.history``.
    """
    if original.input_dim != watermark.input_dim:
        raise InvalidParameter(
            f"input dims differ: original {original.input_dim}, watermark {watermark.input_dim}"
        )
    if original.num_classes != watermark.num_classes:
        raise InvalidParameter("original and watermark datasets disagree on class count")
    if test is not None and test.input_dim != original.input_dim:
        raise InvalidParameter("test set input dim mismatch")

    rng = np.random.default_rng(cfg.rng_seed)
    dims = [original.input_dim, *cfg.hidden, original.num_classes]
    model = TinyClassifier.initialize(dims, rng)

    X = np.concatenate([original.X] + [watermark.X] * cfg.watermark_weight)
    y = np.concatenate([original.y] + [watermark.y] * cfg.watermark_weight)
    history = []

    def on_epoch(epoch, loss):
        entry = {"epoch": epoch, "loss": loss}
        if test is not None:
            entry["test_accuracy"] = accuracy(model, test)
        wm_ok = True
        if len(watermark):
            entry["wm_accuracy"] = accuracy(model, watermark)
            wm_ok = entry["wm_accuracy"] == 1.0
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)
        if cfg.baseline_accuracy is None or test is None:
            return False
        return wm_ok and entry["test_accuracy"] >= cfg.baseline_accuracy - cfg.tolerance

    sgd_epochs(
        model, X, y,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        momentum=cfg.momentum,
        rng=rng,
        on_epoch=on_epoch,
    )
    model.history = history
    return model


def fine_tune_embed(
    model: TinyClassifier,
    original: Dataset,
    watermark: Dataset,
    cfg: TrainConfig = TrainConfig(epochs=10, learning_rate=0.005),
) -> TinyClassifier:
    """Embed a watermark into an already trained model by fine-tuning a copy."""
    if model.input_dim != watermark.input_dim:
        raise InvalidParameter("watermark input dim does not match model")
    tuned = model.copy()
    rng = np.random.default_rng(cfg.rng_seed)
    X = np.concatenate([original.X] + [watermark.X] * cfg.watermark_weight)
    y = np.concatenate([original.y] + [watermark.y] * cfg.watermark_weight)
    return sgd_epochs(
        tuned, X, y,
        epochs=cfg.epochs, learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size, momentum=cfg.momentum, rng=rng,
    )


# -- model file -----------------------------------------------------------


def dump_model(model: TinyClassifier) -> bytes:
    dims = model.layer_dims
    out = bytearray(MODEL_MAGIC)
    out += struct.pack("<B", MODEL_VERSION)
    out += struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    for w, b in zip(model.weights, model.biases):
        out += w.astype("<f8").tobytes(order="C")
        out += b.astype("<f8").tobytes()
    return bytes(out)


def parse_model(data: bytes) -> TinyClassifier:
    if len(data) < 9:
        raise FormatError("truncated model header", offset=len(data))
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad model magic {data[:4]!r}", offset=0)
    if data[4] != MODEL_VERSION:
        raise FormatError(
            f"model file version {data[4]} unsupported (this build reads version {MODEL_VERSION})",
            offset=4,
        )
    (ndims,) = struct.unpack_from("<I", data, 5)
    pos = 9
    if ndims < 2 or len(data) < pos + 4 * ndims:
        raise FormatError("truncated or invalid layer-dims list", offset=pos)
    dims = struct.unpack_from(f"<{ndims}I", data, pos)
    pos += 4 * ndims
    if min(dims) < 1:
        raise FormatError("zero-width layer", offset=9)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            nbytes = 8 * int(np.prod(shape))
            if len(data) < pos + nbytes:
                raise FormatError("truncated parameter data", offset=len(data))
            arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos)
            (ws if len(shape) == 2 else bs).append(arr.reshape(shape).astype(np.float64))
            pos += nbytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    try:
        model = TinyClassifier(ws, bs)
    except InvalidParameter as exc:
        raise FormatError(str(exc), offset=9) from None
    if not all(np.all(np.isfinite(p)) for p in model.parameters()):
        raise FormatError("non-finite parameters", offset=9 + 4 * ndims)
    return model


def save_model(model: TinyClassifier, path) -> None:
    Path(path).write_bytes(dump_model(model))


def load_model(path) -> TinyClassifier:
    return parse_model(Path(path).read_bytes())
