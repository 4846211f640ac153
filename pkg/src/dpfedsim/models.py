"""Model zoo with hand-derived per-example gradients.

Parameters are flat float64 vectors.  Linear and logistic models fold the bias
into the parameter vector (an implicit all-ones feature), so the zero vector is
a valid starting point: a zero logistic model scores every example at 0.5 and
pays natural-log cross-entropy ln 2.  Losses are per example; dataset loss is
their mean.  The quadratic kind is a data-free oracle 0.5 w'Aw - b'w whose
gradient is exactly Aw - b, used for convergence measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Example, LocalDataset
from .streams import stream

__all__ = [
    "ModelSpec",
    "param_count",
    "init_model",
    "per_example_gradient",
    "per_example_gradients",
    "example_loss",
    "dataset_loss",
    "accuracy",
]

MODEL_KINDS = (
    "linear-regression",
    "logistic-binary",
    "softmax-linear",
    "mlp-1hidden",
    "quadratic",
)

INIT_SCALE = 0.05


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Shape of a model: kind plus the dimensions that kind needs.

    ``quad_matrix`` must be symmetric so the oracle gradient is exactly
    ``quad_matrix @ w - quad_linear``.
    """

    kind: str
    input_dim: int = 0
    num_classes: int = 2
    hidden_dim: int = 0
    quad_matrix: np.ndarray | None = field(default=None, repr=False)
    quad_linear: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.kind == "quadratic":
            a, b = self.quad_matrix, self.quad_linear
            if a is None or b is None:
                raise ValueError("quadratic models need quad_matrix and quad_linear")
            a = np.asarray(a, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
                raise ValueError("quad_matrix must be square and match quad_linear")
            if not np.allclose(a, a.T, atol=1e-12):
                raise ValueError("quad_matrix must be symmetric")
            object.__setattr__(self, "quad_matrix", a)
            object.__setattr__(self, "quad_linear", b)
            return
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind in ("softmax-linear", "mlp-1hidden") and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "mlp-1hidden" and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


def param_count(spec: ModelSpec) -> int:
    """Flat parameter dimension of a model."""
    p, k, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.kind in ("linear-regression", "logistic-binary"):
        return p + 1
    if spec.kind == "softmax-linear":
        return k * (p + 1)
    if spec.kind == "mlp-1hidden":
        return p * h + h + h * k + k
    return spec.quad_linear.shape[0]


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Deterministic small symmetric init: uniform on [-0.05, 0.05]."""
    rng = stream(seed, "init", spec.kind)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=param_count(spec))


def _augment(features: np.ndarray) -> np.ndarray:
    return np.concatenate([features, np.ones((features.shape[0], 1))], axis=1)


def _check_batch(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
                 labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"params must have shape ({param_count(spec)},), got {params.shape}")
    if spec.kind != "quadratic" and features.shape[1] != spec.input_dim:
        raise ValueError(
            f"features must have width {spec.input_dim}, got {features.shape[1]}")
    if labels.shape[0] != features.shape[0]:
        raise ValueError("labels must match the number of feature rows")
    if spec.kind in ("logistic-binary", "softmax-linear", "mlp-1hidden"):
        k = 2 if spec.kind == "logistic-binary" else spec.num_classes
        y = labels.astype(np.int64)
        if np.any(y != labels) or y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must be integers in [0, {k})")
        labels = y
    return features, labels


def _unpack_mlp(spec: ModelSpec, params: np.ndarray):
    p, h, k = spec.input_dim, spec.hidden_dim, spec.num_classes
    i = 0
    w1 = params[i:i + h * p].reshape(h, p); i += h * p
    b1 = params[i:i + h]; i += h
    w2 = params[i:i + k * h].reshape(k, h); i += k * h
    b2 = params[i:i + k]
    return w1, b1, w2, b2


def _sigmoid(s: np.ndarray) -> np.ndarray:
    # two-branch form: exp never sees a positive argument
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _scores(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    if spec.kind in ("linear-regression", "logistic-binary"):
        return _augment(features) @ params
    if spec.kind == "softmax-linear":
        w = params.reshape(spec.num_classes, spec.input_dim + 1)
        return _augment(features) @ w.T
    w1, b1, w2, b2 = _unpack_mlp(spec, params)
    hidden = np.tanh(features @ w1.T + b1)
    return hidden @ w2.T + b2


def batch_losses(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
                 labels: np.ndarray) -> np.ndarray:
    """Per-example losses for a batch, shape (B,)."""
    features, labels = _check_batch(spec, params, features, labels)
    n = features.shape[0]
    if spec.kind == "quadratic":
        w = params
        value = 0.5 * w @ spec.quad_matrix @ w - spec.quad_linear @ w
        return np.full(n, value)
    if spec.kind == "linear-regression":
        resid = _scores(spec, params, features) - labels.astype(np.float64)
        return 0.5 * resid ** 2
    if spec.kind == "logistic-binary":
        s = _scores(spec, params, features)
        return np.logaddexp(0.0, s) - labels * s
    logp = _log_softmax(_scores(spec, params, features))
    return -logp[np.arange(n), labels]


def per_example_gradients(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
                          labels: np.ndarray) -> np.ndarray:
    """Per-example loss gradients for a batch, shape (B, param_count)."""
    features, labels = _check_batch(spec, params, features, labels)
    n = features.shape[0]
    if spec.kind == "quadratic":
        g = spec.quad_matrix @ params - spec.quad_linear
        return np.tile(g, (n, 1))
    if spec.kind in ("linear-regression", "logistic-binary"):
        s = _scores(spec, params, features)
        if spec.kind == "linear-regression":
            err = s - labels.astype(np.float64)
        else:
            err = _sigmoid(s) - labels
        return err[:, None] * _augment(features)
    if spec.kind == "softmax-linear":
        probs = _softmax(_scores(spec, params, features))
        probs[np.arange(n), labels] -= 1.0
        return np.einsum("bk,bp->bkp", probs, _augment(features)).reshape(n, -1)
    w1, b1, w2, b2 = _unpack_mlp(spec, params)
    hidden = np.tanh(features @ w1.T + b1)
    probs = _softmax(hidden @ w2.T + b2)
    probs[np.arange(n), labels] -= 1.0
    d_hidden = (probs @ w2) * (1.0 - hidden ** 2)
    g_w1 = np.einsum("bh,bp->bhp", d_hidden, features).reshape(n, -1)
    g_w2 = np.einsum("bk,bh->bkh", probs, hidden).reshape(n, -1)
    return np.concatenate([g_w1, d_hidden, g_w2, probs], axis=1)


def per_example_gradient(spec: ModelSpec, params: np.ndarray, example: Example) -> np.ndarray:
    """Loss gradient of a single example."""
    feats = np.asarray(example.features, dtype=np.float64)[None, :]
    return per_example_gradients(spec, params, feats, np.array([example.label]))[0]


def example_loss(spec: ModelSpec, params: np.ndarray, example: Example) -> float:
    """Loss of a single example."""
    feats = np.asarray(example.features, dtype=np.float64)[None, :]
    return float(batch_losses(spec, params, feats, np.array([example.label]))[0])


def dataset_loss(spec: ModelSpec, params: np.ndarray, data: LocalDataset) -> float:
    """Mean per-example loss over a dataset."""
    return float(batch_losses(spec, params, data.features, data.labels).mean())


def accuracy(spec: ModelSpec, params: np.ndarray, data: LocalDataset) -> float:
    """Fraction of correct argmax predictions; ties go to the lowest class index.

    A zero logistic model therefore predicts class 0 everywhere.  Raises for
    model kinds without a classification readout.
    """
    if spec.kind in ("linear-regression", "quadratic"):
        raise ValueError(f"accuracy is undefined for model kind {spec.kind!r}")
    features, labels = _check_batch(spec, params, data.features, data.labels)
    scores = _scores(spec, params, features)
    if spec.kind == "logistic-binary":
        pred = (scores > 0.0).astype(np.int64)
    else:
        pred = np.argmax(scores, axis=1)
    return float(np.mean(pred == labels))
