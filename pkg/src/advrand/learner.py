"""Small feed-forward learner with hand-written backpropagation.

Inputs are row batches ``x`` of shape (N, D). Weights are stored as (in, out)
matrices so a layer computes ``a @ W + b``. All arithmetic is float64.

Two losses are supported:

``cross_entropy_softmax``
    logits (N, K), integer labels (N,).
``per_cell_cross_entropy``
    logits (N, cells * K) read as (N, cells, K), labels (N, cells); the
    per-sample loss is the mean cell cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidLabelError, InvalidParameterError, NumericError, ShapeError

LOSS_KINDS = ("cross_entropy_softmax", "per_cell_cross_entropy")
ACTIVATIONS = ("relu", "identity")
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"


@dataclass
class LearnerState:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a learner needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise InvalidParameterError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[1],):
                raise ShapeError(f"layer {i}: weight {layer.weight.shape} / bias {layer.bias.shape} mismatch")
            if i and self.layers[i - 1].weight.shape[1] != layer.weight.shape[0]:
                raise ShapeError(f"layer {i} input dim does not match layer {i - 1} output")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "LearnerState":
        return LearnerState([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


Gradients = list  # [(dW, db), ...] congruent with LearnerState.layers


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden_activation: str = "relu") -> LearnerState:
    """He-initialised MLP; the last layer is linear, biases start at zero."""
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
        layers.append(Layer(w, np.zeros(n_out), "identity" if last else hidden_activation))
    return LearnerState(layers)


def _as_batch(h: LearnerState, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != h.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match input dim {h.input_dim}")
    return x, single


def _forward_cache(h: LearnerState, x: np.ndarray) -> tuple[list, list]:
    acts, pres = [x], []
    a = x
    for layer in h.layers:
        z = a @ layer.weight + layer.bias
        pres.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(a)
    return acts, pres


def forward(h: LearnerState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(logits, features)``; features are the input to the last layer."""
    xb, single = _as_batch(h, x)
    acts, _ = _forward_cache(h, xb)
    logits, feats = acts[-1], acts[-2]
    if single:
        return logits[0], feats[0]
    return logits, feats


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(z, axis))


def _cells_view(logits: np.ndarray, label: np.ndarray) -> np.ndarray:
    n, width = logits.shape
    cells = label.shape[1]
    if width % cells:
        raise ShapeError(f"{width} logits cannot split over {cells} cells")
    return logits.reshape(n, cells, width // cells)


def _normalize(kind: str, logits, label) -> tuple[np.ndarray, np.ndarray]:
    if kind not in LOSS_KINDS:
        raise InvalidParameterError(f"unknown loss kind {kind!r}")
    logits = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    if kind == "cross_entropy_softmax":
        if logits.ndim == 1:
            logits, label = logits[None, :], label.reshape(1)
        if label.shape != (logits.shape[0],):
            raise ShapeError(f"labels {label.shape} vs logits {logits.shape}")
        k = logits.shape[1]
    else:
        if label.ndim == 1:
            logits, label = logits.reshape(1, -1), label[None, :]
        if logits.ndim != 2 or label.ndim != 2 or label.shape[0] != logits.shape[0]:
            raise ShapeError(f"labels {label.shape} vs logits {logits.shape}")
        logits = _cells_view(logits, label)
        k = logits.shape[2]
    if not np.issubdtype(label.dtype, np.integer) or label.min(initial=0) < 0 or label.max(initial=0) >= k:
        raise InvalidLabelError(f"labels must be integers in [0, {k})")
    return logits, label


def sample_losses(kind: str, logits, label) -> np.ndarray:
    """Per-sample losses (N,). For the per-cell kind each value is a cell mean."""
    z, y = _normalize(kind, logits, label)
    if kind == "cross_entropy_softmax":
        return -np.take_along_axis(log_softmax(z), y[:, None], axis=1)[:, 0]
    return cell_losses(kind, logits, label).mean(axis=1)


def cell_losses(kind: str, logits, label) -> np.ndarray:
    """(N, cells) cross-entropies for the per-cell kind."""
    z, y = _normalize("per_cell_cross_entropy", logits, label)
    return -np.take_along_axis(log_softmax(z), y[..., None], axis=2)[..., 0]


def loss(kind: str, logits, label) -> float:
    """Mean loss over the batch."""
    return float(sample_losses(kind, logits, label).mean())


def loss_grad_logits(kind: str, logits, label) -> np.ndarray:
    """d(mean loss)/d(logits), same shape as the (batched) logits."""
    z, y = _normalize(kind, logits, label)
    p = softmax(z)
    if kind == "cross_entropy_softmax":
        p[np.arange(len(y)), y] -= 1.0
        return p / len(y)
    n, cells, _ = p.shape
    np.put_along_axis(p, y[..., None], np.take_along_axis(p, y[..., None], axis=2) - 1.0, axis=2)
    return (p / (n * cells)).reshape(n, -1)


def backprop(h: LearnerState, x: np.ndarray, dlogits: np.ndarray, dfeatures: np.ndarray | None = None) -> tuple[Gradients, np.ndarray]:
    """Push upstream gradients through the network.

    ``dfeatures`` is an optional extra gradient arriving at the penultimate
    activations (the features). Returns parameter gradients and d/dx.
    """
    xb, _ = _as_batch(h, x)
    acts, pres = _forward_cache(h, xb)
    grads: Gradients = [None] * len(h.layers)
    delta = np.asarray(dlogits, dtype=np.float64).reshape(acts[-1].shape)
    for i in range(len(h.layers) - 1, -1, -1):
        layer = h.layers[i]
        if layer.activation == "relu":
            delta = delta * (pres[i] > 0)
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        delta = delta @ layer.weight.T
        if i == len(h.layers) - 1 and dfeatures is not None:
            delta = delta + np.asarray(dfeatures, dtype=np.float64).reshape(delta.shape)
    return grads, delta


def backward(h: LearnerState, x: np.ndarray, label, kind: str) -> Gradients:
    """Exact gradient of the mean loss with respect to every weight and bias."""
    logits, _ = forward(h, x)
    grads, _ = backprop(h, x, loss_grad_logits(kind, logits, label))
    return grads


def sgd_step(h: LearnerState, grads: Gradients, lr: float) -> LearnerState:
    if not lr > 0:
        raise InvalidParameterError("learning rate must be positive")
    if len(grads) != len(h.layers):
        raise ShapeError("gradient structure does not match the learner")
    layers = []
    for layer, (gw, gb) in zip(h.layers, grads):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite gradient")
        layers.append(Layer(layer.weight - lr * gw, layer.bias - lr * gb, layer.activation))
    return LearnerState(layers)


def add_grads(a: Gradients, b: Gradients, scale: float = 1.0) -> Gradients:
    return [(wa + scale * wb, ba + scale * bb) for (wa, ba), (wb, bb) in zip(a, b)]


@dataclass
class EvalReport:
    mean_loss: float
    accuracy: float
    per_class_accuracy: list


def predict(h: LearnerState, x: np.ndarray, kind: str, cells: int | None = None) -> np.ndarray:
    """Argmax predictions; ties go to the lowest class index."""
    logits, _ = forward(h, x)
    logits = np.atleast_2d(logits)
    if kind == "per_cell_cross_entropy":
        if cells is None:
            raise ShapeError("per-cell prediction needs the cell count")
        return logits.reshape(len(logits), cells, -1).argmax(axis=2)
    return logits.argmax(axis=1)


def evaluate(h: LearnerState, x: np.ndarray, y, kind: str, batch_size: int = 1024) -> EvalReport:
    y = np.asarray(y)
    if len(y) == 0:
        raise InvalidParameterError("cannot evaluate on an empty dataset")
    losses, preds = [], []
    cells = y.shape[1] if y.ndim == 2 else None
    for i in range(0, len(y), batch_size):
        logits, _ = forward(h, x[i:i + batch_size])
        logits = np.atleast_2d(logits)
        losses.append(sample_losses(kind, logits, y[i:i + batch_size]))
        if cells is None:
            preds.append(logits.argmax(axis=1))
        else:
            preds.append(logits.reshape(len(logits), cells, -1).argmax(axis=2))
    losses = np.concatenate(losses)
    pred = np.concatenate(preds)
    n_classes = h.output_dim if cells is None else h.output_dim // cells
    per_class = []
    for c in range(n_classes):
        sel = y == c
        per_class.append(float((pred[sel] == c).mean()) if sel.any() else float("nan"))
    return EvalReport(float(losses.mean()), float((pred == y).mean()), per_class)


# ---------------------------------------------------------------------------
# checkpoints: npz with keys version, n_layers, w{i}, b{i}, act{i}


def save_checkpoint(path, h: LearnerState) -> None:
    arrays = {"version": np.array(CHECKPOINT_VERSION), "n_layers": np.array(len(h.layers))}
    for i, layer in enumerate(h.layers):
        arrays[f"w{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
        arrays[f"act{i}"] = np.array(layer.activation)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> LearnerState:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise InvalidParameterError(f"unsupported checkpoint version {version}")
        return LearnerState([
            Layer(data[f"w{i}"].copy(), data[f"b{i}"].copy(), str(data[f"act{i}"]))
            for i in range(int(data["n_layers"]))
        ])
