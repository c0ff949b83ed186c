"""Small dense network trained one epoch at a time with plain numpy.

The model is a tanh MLP with a softmax output, trained by mini-batch SGD with
decoupled-from-loss weight decay (``w -= lr * (grad + wd * w)``) and inverted
dropout on hidden activations. Models are immutable: every training call
returns a new :class:`MlpModel`.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

BATCH_SIZE = 32
UNREACHED_PENALTY = 10
CHECKPOINT_MAGIC = b"EVOHPO-MLP\x00"
CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or weight."""

    def __init__(self, hparams: "TrainHparams", epoch: int):
        self.hparams = hparams
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} with {hparams}")


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainHparams:
    learning_rate: float = 0.1
    weight_decay: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout <= 0.95:
            raise ValueError(f"dropout must lie in [0, 0.95], got {self.dropout}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], defaults: "TrainHparams | None" = None) -> "TrainHparams":
        base = defaults or cls()
        return cls(
            learning_rate=float(values.get("learning_rate", base.learning_rate)),
            weight_decay=float(values.get("weight_decay", base.weight_decay)),
            dropout=float(values.get("dropout", base.dropout)),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    epoch_counter: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(ws):
            raise ValueError("need one weight matrix and bias vector per layer transition")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k}: shapes {w.shape}, {b.shape} inconsistent with {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))

    def same_as(self, other: "MlpModel") -> bool:
        """Bit-identical parameters, shapes and epoch counter."""
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        """Versioned checkpoint record: magic, version, JSON header, then
        every weight and bias as little-endian float64 in row-major order."""
        header = json.dumps(
            {"layer_sizes": list(self.layer_sizes), "epoch_counter": int(self.epoch_counter)},
            sort_keys=True,
        ).encode()
        parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
        for w, b in zip(self.weights, self.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MlpModel":
        m = len(CHECKPOINT_MAGIC)
        if blob[:m] != CHECKPOINT_MAGIC or len(blob) < m + 8:
            raise CheckpointFormatError("not a model checkpoint")
        version, hlen = struct.unpack("<II", blob[m:m + 8])
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        pos = m + 8
        try:
            header = json.loads(blob[pos:pos + hlen])
            sizes = [int(s) for s in header["layer_sizes"]]
            epoch_counter = int(header["epoch_counter"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointFormatError("unreadable checkpoint header") from exc
        pos += hlen
        expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])) * 8
        if len(blob) - pos != expected:
            raise CheckpointFormatError(f"checkpoint payload is {len(blob) - pos} bytes, expected {expected}")
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            ws.append(np.frombuffer(blob, dtype="<f8", count=a * b, offset=pos).reshape(a, b))
            pos += a * b * 8
            bs.append(np.frombuffer(blob, dtype="<f8", count=b, offset=pos))
            pos += b * 8
        return cls(tuple(sizes), tuple(ws), tuple(bs), epoch_counter)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    n_classes: int = field(default=2)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            idx = self.train_idx
        elif name in ("validation", "val"):
            idx = self.val_idx
        else:
            raise ValueError(f"unknown split {name!r}")
        return self.features[idx], self.labels[idx]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def make_dataset(seed: int, n: int = 1000, kind: str = "spirals", n_classes: int | None = None,
                 noise: float | None = None, turns: float = 1.25) -> SyntheticDataset:
    """Deterministic toy classification data with a stratified 80/20 split.

    ``blobs``: isotropic unit-variance clusters on a circle of radius 4
    (3 classes by default). ``spirals``: two interleaved spirals of ``turns``
    revolutions with Gaussian jitter (sd 0.1 by default), beyond the reach of
    a linear classifier.
    """
    if n < 100:
        raise ValueError(f"dataset needs n >= 100, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        k = n_classes or 3
        labels = np.arange(n) % k
        angles = 2 * np.pi * np.arange(k) / k
        centers = 4.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        sd = 1.0 if noise is None else noise
        X = centers[labels] + rng.normal(0.0, sd, size=(n, 2))
    elif kind == "spirals":
        k = 2
        labels = np.arange(n) % 2
        t = np.sqrt(rng.uniform(0.0, 1.0, size=n))
        theta = 2.0 * np.pi * turns * t + np.pi * labels
        sd = 0.1 if noise is None else noise
        X = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1) * 2.0
        X += rng.normal(0.0, sd, size=X.shape)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    train, val = [], []
    for c in range(k):
        rows = rng.permutation(np.flatnonzero(labels == c))
        cut = int(round(0.8 * len(rows)))
        train.append(rows[:cut])
        val.append(rows[cut:])
    train_idx = np.sort(np.concatenate(train))
    val_idx = np.sort(np.concatenate(val))
    for a in (X, labels, train_idx, val_idx):
        a.setflags(write=False)
    return SyntheticDataset(X, labels, train_idx, val_idx, k)


def init_model(layer_sizes: Sequence[int], seed: int) -> MlpModel:
    """Weights ~ N(0, 1/fan_in), zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        ws.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_sizes), tuple(ws), tuple(bs), 0)


def dropout_mask(shape, dropout: float, rng: np.random.Generator) -> np.ndarray:
    keep = 1.0 - dropout
    return (rng.random(shape) < keep) / keep


def _forward(ws, bs, X, dropout=0.0, rng=None):
    h = X
    inputs, acts, masks = [], [], []
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        inputs.append(h)
        z = h @ w + b
        if k == last:
            return z, (inputs, acts, masks)
        a = np.tanh(z)
        acts.append(a)
        m = dropout_mask(a.shape, dropout, rng) if dropout > 0 else None
        masks.append(m)
        h = a if m is None else a * m
    raise AssertionError("unreachable")


def forward(model: MlpModel, X: np.ndarray, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Return ``(logits, cache)``; the cache holds each layer's (masked) input,
    the unmasked hidden activations and the dropout masks."""
    return _forward(model.weights, model.biases, X, dropout, rng)


def softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def _loss_and_grads(ws, bs, X, y, dropout=0.0, rng=None):
    logits, (inputs, acts, masks) = _forward(ws, bs, X, dropout, rng)
    loss, d = softmax_xent(logits, y)
    gw = [None] * len(ws)
    gb = [None] * len(ws)
    for k in range(len(ws) - 1, -1, -1):
        gw[k] = inputs[k].T @ d
        gb[k] = d.sum(axis=0)
        if k == 0:
            break
        d = d @ ws[k].T
        if masks[k - 1] is not None:
            d = d * masks[k - 1]
        d = d * (1.0 - acts[k - 1] ** 2)
    return loss, gw, gb


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray, dropout: float = 0.0,
                   rng: np.random.Generator | None = None):
    """Data loss (no weight-decay term) and its gradients, by backprop."""
    return _loss_and_grads(model.weights, model.biases, X, y, dropout, rng)


def sgd_step(weights, biases, gw, gb, lr: float, wd: float):
    """One update ``w <- w - lr * (g + wd * w)``; biases are not decayed."""
    new_w = [w - lr * (g + wd * w) for w, g in zip(weights, gw)]
    new_b = [b - lr * g for b, g in zip(biases, gb)]
    return new_w, new_b


def train_epoch(model: MlpModel, data: SyntheticDataset, h: TrainHparams,
                rng: np.random.Generator) -> tuple[MlpModel, float]:
    """One shuffled pass of mini-batch SGD over the training split."""
    if model.layer_sizes[0] != data.n_features or model.layer_sizes[-1] < data.n_classes:
        raise ValueError(f"model {model.layer_sizes} incompatible with dataset "
                         f"({data.n_features} features, {data.n_classes} classes)")
    X, y = data.split("train")
    order = rng.permutation(len(y))
    ws = [np.array(w) for w in model.weights]
    bs = [np.array(b) for b in model.biases]
    total = 0.0
    # overflow is detected explicitly below, so numpy's warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(order), BATCH_SIZE):
            idx = order[start:start + BATCH_SIZE]
            loss, gw, gb = _loss_and_grads(ws, bs, X[idx], y[idx], h.dropout, rng)
            if not math.isfinite(loss):
                raise DivergenceError(h, model.epoch_counter + 1)
            total += loss * len(idx)
            ws, bs = sgd_step(ws, bs, gw, gb, h.learning_rate, h.weight_decay)
    out = MlpModel(model.layer_sizes, tuple(ws), tuple(bs), model.epoch_counter + 1)
    if not out.is_finite():
        raise DivergenceError(h, out.epoch_counter)
    return out, total / len(order)


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, X)
    return np.argmax(logits, axis=1)


def evaluate_error(model: MlpModel, data: SyntheticDataset, split: str = "validation") -> float:
    """Misclassification rate on a split, dropout disabled."""
    X, y = data.split(split)
    return float(np.mean(predict(model, X) != y))


def epochs_to_threshold(h: TrainHparams, hidden: Sequence[int], data: SyntheticDataset,
                        threshold: float, max_epochs: int, rng: np.random.Generator) -> float:
    """Epochs needed before validation error <= threshold on two consecutive
    end-of-epoch checks, training a fresh model with hidden widths ``hidden``.

    Never reaching the threshold, or diverging, gives ``max_epochs + 10``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    sizes = (data.n_features, *[int(s) for s in hidden], data.n_classes)
    model = init_model(sizes, int(rng.integers(2**63)))
    streak = 0
    for epoch in range(1, max_epochs + 1):
        try:
            model, _ = train_epoch(model, data, h, rng)
        except DivergenceError:
            break
        if evaluate_error(model, data, "validation") <= threshold:
            streak += 1
            if streak == 2:
                return float(epoch)
        else:
            streak = 0
    return float(max_epochs + UNREACHED_PENALTY)


def regularized_loss(model: MlpModel, X: np.ndarray, y: np.ndarray, wd: float) -> float:
    """Loss whose gradient is the SGD direction ``grad + wd * w``."""
    logits, _ = forward(model, X)
    loss, _ = softmax_xent(logits, y)
    return loss + 0.5 * wd * sum(float(np.sum(w * w)) for w in model.weights)


GradFn = Callable[[MlpModel, np.ndarray, np.ndarray, float], tuple[list, list]]


def analytic_grads(model: MlpModel, X: np.ndarray, y: np.ndarray, wd: float):
    _, gw, gb = loss_and_grads(model, X, y)
    return [g + wd * w for g, w in zip(gw, model.weights)], gb


def gradient_check(model: MlpModel, data: SyntheticDataset, h: TrainHparams, n_params: int = 50,
                   rng: np.random.Generator | None = None, step: float = 1e-5,
                   grad_fn: GradFn = analytic_grads, max_rows: int = 64) -> float:
    """Max relative error between ``grad_fn`` and central differences.

    Checks ``n_params`` randomly chosen parameters (all of them if the model is
    smaller) on up to ``max_rows`` training rows.
    """
    if h.dropout != 0:
        raise ValueError("gradient check requires dropout = 0")
    rng = rng or np.random.default_rng(0)
    X, y = data.split("train")
    X, y = X[:max_rows], y[:max_rows]
    gw, gb = grad_fn(model, X, y, h.weight_decay)
    arrays = [("w", k) for k in range(len(model.weights))] + [("b", k) for k in range(len(model.biases))]
    sizes = [model.weights[k].size if kind == "w" else model.biases[k].size for kind, k in arrays]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    worst = 0.0
    for flat in picks:
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        kind, k = arrays[slot]
        pos = int(flat - offsets[slot])
        analytic = (gw[k] if kind == "w" else gb[k]).ravel()[pos]
        numeric = _central_difference(model, X, y, h.weight_decay, kind, k, pos, step)
        denom = max(abs(analytic) + abs(numeric), 1e-7)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def _central_difference(model, X, y, wd, kind, k, pos, step):
    def shifted(delta):
        ws = [np.array(w) for w in model.weights]
        bs = [np.array(b) for b in model.biases]
        target = ws[k] if kind == "w" else bs[k]
        target.ravel()[pos] += delta
        return regularized_loss(MlpModel(model.layer_sizes, tuple(ws), tuple(bs)), X, y, wd)

    return (shifted(step) - shifted(-step)) / (2 * step)
