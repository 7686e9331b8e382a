"""Multinomial logistic regression on polynomial features, trained by full-batch GD.

Inputs are standardized with training statistics, lifted to all monomials up
to ``poly_degree``, and the lifted columns standardized again so high-degree
terms do not dominate the curvature. Weights start at zero, so training is
fully deterministic and an untrained model predicts the uniform distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

from uherd.core import PreconditionError


@dataclass(frozen=True)
class ClassifierSpec:
    poly_degree: int = 5
    l2_penalty: float = 1e-3
    max_epochs: int = 5000
    learning_rate: float = 0.5
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.poly_degree < 1:
            raise PreconditionError("poly_degree must be >= 1")
        if not (np.isfinite(self.l2_penalty) and self.l2_penalty >= 0):
            raise PreconditionError("l2_penalty must be finite and >= 0")
        if self.max_epochs < 0:
            raise PreconditionError("max_epochs must be >= 0")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise PreconditionError("learning_rate must be positive")
        if not (np.isfinite(self.tol) and self.tol > 0):
            raise PreconditionError("tol must be positive")


@dataclass(frozen=True)
class TrainedModel:
    """Fitted weights; the last row of ``weights`` is the bias."""

    weights: np.ndarray
    spec: ClassifierSpec
    train_loss: float
    input_dim: int
    x_mean: np.ndarray
    x_scale: np.ndarray
    phi_mean: np.ndarray
    phi_scale: np.ndarray
    epochs: int = 0
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@lru_cache(maxsize=64)
def _monomials(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    terms = []
    for deg in range(1, degree + 1):
        terms.extend(combinations_with_replacement(range(dim), deg))
    return tuple(terms)


def polynomial_lift(x, degree: int) -> np.ndarray:
    """All monomials of total degree 1..degree in graded lexicographic order.

    Accepts one row or a matrix of rows; no constant column is produced.
    """
    if degree < 1:
        raise PreconditionError("degree must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    cols = []
    for term in _monomials(rows.shape[1], degree):
        col = rows[:, term[0]].copy()
        for i in term[1:]:
            col = col * rows[:, i]
        cols.append(col)
    out = np.stack(cols, axis=1)
    return out[0] if single else out


def _safe_scale(std: np.ndarray) -> np.ndarray:
    return np.where(std > 1e-12, std, 1.0)


def design_matrix(model_or_stats, x) -> np.ndarray:
    """Standardize, lift, restandardize and append the bias column."""
    m = model_or_stats
    x = np.atleast_2d(np.asarray(getattr(x, "values", x), dtype=np.float64))
    if x.shape[1] != m.input_dim:
        raise PreconditionError(f"expected {m.input_dim} input features, got {x.shape[1]}")
    z = (x - m.x_mean) / m.x_scale
    phi = (polynomial_lift(z, m.spec.poly_degree) - m.phi_mean) / m.phi_scale
    return np.hstack([phi, np.ones((phi.shape[0], 1))])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(y.size), y]))


def loss_and_grad(w: np.ndarray, design: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * |W|^2`` (bias row excluded) and its gradient."""
    logits = design @ w
    probs = _softmax(logits)
    probs[np.arange(y.size), y] -= 1.0
    grad = design.T @ probs / y.size
    reg = w.copy()
    reg[-1] = 0.0
    grad += l2 * reg
    loss = cross_entropy(logits, y) + 0.5 * l2 * float((reg * reg).sum())
    return loss, grad


def train(features, labels, spec: ClassifierSpec, num_classes: int | None = None) -> TrainedModel:
    """Fit from zero weights with full-batch gradient descent.

    Stops when the gradient norm drops below ``spec.tol`` or after
    ``spec.max_epochs`` steps. The step is ``min(learning_rate, 1/L)`` with
    ``L`` an upper bound on the loss curvature, so the objective never
    increases.
    """
    x = np.atleast_2d(np.asarray(getattr(features, "values", features), dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).ravel()
    if x.shape[0] < 1:
        raise PreconditionError("need at least one training sample")
    if y.size != x.shape[0]:
        raise PreconditionError(f"{x.shape[0]} feature rows but {y.size} labels")
    k = int(num_classes) if num_classes is not None else max(int(y.max()) + 1, 2)
    if y.min() < 0 or y.max() >= k:
        raise PreconditionError(f"labels must lie in [0, {k})")

    x_mean = x.mean(axis=0)
    x_scale = _safe_scale(x.std(axis=0))
    phi = polynomial_lift((x - x_mean) / x_scale, spec.poly_degree)
    phi_mean = phi.mean(axis=0)
    phi_scale = _safe_scale(phi.std(axis=0))
    stats = TrainedModel(np.zeros((phi.shape[1] + 1, k)), spec, 0.0, x.shape[1],
                         x_mean, x_scale, phi_mean, phi_scale)
    design = design_matrix(stats, x)

    # Softmax cross-entropy curvature is at most 1/2 * lambda_max(X^T X / M);
    # the trace bounds lambda_max.
    curvature = 0.5 * float((design * design).sum()) / y.size + spec.l2_penalty
    step = min(spec.learning_rate, 1.0 / curvature)

    w = np.zeros((design.shape[1], k))
    history = []
    epochs = 0
    loss, grad = loss_and_grad(w, design, y, spec.l2_penalty)
    history.append(loss)
    while epochs < spec.max_epochs and float(np.sqrt((grad * grad).sum())) >= spec.tol:
        w = w - step * grad
        epochs += 1
        loss, grad = loss_and_grad(w, design, y, spec.l2_penalty)
        history.append(loss)

    train_loss = cross_entropy(design @ w, y)
    return TrainedModel(w, spec, train_loss, x.shape[1], x_mean, x_scale, phi_mean, phi_scale,
                        epochs, tuple(history))


def predict_logits(model: TrainedModel, features) -> np.ndarray:
    return design_matrix(model, features) @ model.weights


def predict_proba(model: TrainedModel, features) -> np.ndarray:
    return _softmax(predict_logits(model, features))


def untrained_model(input_dim: int, num_classes: int, spec: ClassifierSpec | None = None) -> TrainedModel:
    """Zero-weight model with identity standardization (predicts uniformly)."""
    spec = spec or ClassifierSpec()
    n_terms = len(_monomials(input_dim, spec.poly_degree))
    return TrainedModel(np.zeros((n_terms + 1, num_classes)), spec, float(np.log(num_classes)), input_dim,
                        np.zeros(input_dim), np.ones(input_dim), np.zeros(n_terms), np.ones(n_terms))
