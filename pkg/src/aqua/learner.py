"""Deterministic softmax-linear classifier over instance feature vectors.

A stand-in for a heavyweight answering model: small enough to train in
milliseconds, rich enough to expose calibrated predictive distributions and
per-instance losses to the selection and filtration machinery.  Weights start
at zero so the untrained model predicts exactly the uniform distribution,
which makes first-epoch behavior analytically known.

Training is plain minibatch SGD with an optional L2 penalty.  Every source of
randomness is derived from (seed, epoch index), so a trajectory is a pure
function of initial params, data order, and seeds.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .validation import check_feature_matrix, check_labels

_SHUFFLE_STREAM = 97
_BOOTSTRAP_STREAM = 211


class SoftmaxLearner(BaseEstimator):
    """Multinomial logistic classifier with persistent, incrementally trained params.

    Parameters
    ----------
    n_features : input dimensionality d
    n_terms : vocabulary size, at least 2
    learning_rate : SGD step size (0 allowed: degenerate no-op updates)
    batch_size : minibatch size
    steps_per_epoch : gradient steps per epoch; None means one full pass
    l2 : L2 penalty coefficient on W (0 disables)
    seed : base seed for shuffling and resampling
    """

    def __init__(self, n_features: int, n_terms: int, learning_rate: float = 0.1,
                 batch_size: int = 32, steps_per_epoch: int | None = None,
                 l2: float = 0.0, seed: int = 0):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        if n_terms < 2:
            raise ValueError("n_terms must be >= 2")
        if learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if steps_per_epoch is not None and steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1 or None")
        self.n_features = n_features
        self.n_terms = n_terms
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.l2 = l2
        self.seed = seed
        # zero init: the untrained prediction is exactly uniform
        self.W_ = np.zeros((n_terms, n_features))
        self.b_ = np.zeros(n_terms)

    # ------------------------------------------------------------------
    # inference

    def predict_proba(self, X):
        """Stabilized softmax over W x + b; rows sum to 1."""
        single = np.asarray(X).ndim == 1
        X = check_feature_matrix(X, self.n_features)
        logits = X @ self.W_.T + self.b_
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        return probs[0] if single else probs

    def predict(self, X):
        single = np.asarray(X).ndim == 1
        probs = self.predict_proba(check_feature_matrix(X, self.n_features))
        ids = np.argmax(probs, axis=1)
        return int(ids[0]) if single else ids

    def losses(self, X, y) -> np.ndarray:
        """Per-instance cross-entropy, -log p_label."""
        X = check_feature_matrix(X, self.n_features)
        y = check_labels(y, self.n_terms, n_rows=X.shape[0])
        probs = self.predict_proba(X)
        picked = probs[np.arange(len(y)), y]
        return -np.log(np.maximum(picked, np.finfo(float).tiny))

    def instance_loss(self, x, label: int) -> float:
        return float(self.losses(np.asarray(x)[None, :], np.array([label]))[0])

    def mean_loss(self, X, y) -> float:
        return float(self.losses(X, y).mean())

    def objective(self, X, y) -> float:
        """Mean cross-entropy plus the L2 penalty; the quantity SGD descends."""
        return self.mean_loss(X, y) + 0.5 * self.l2 * float(np.sum(self.W_ * self.W_))

    def gradients(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        """Analytic gradient of `objective` with respect to (W, b)."""
        X = check_feature_matrix(X, self.n_features)
        y = check_labels(y, self.n_terms, n_rows=X.shape[0])
        probs = np.atleast_2d(self.predict_proba(X))
        G = probs.copy()
        G[np.arange(len(y)), y] -= 1.0
        G /= len(y)
        grad_W = G.T @ X + self.l2 * self.W_
        grad_b = G.sum(axis=0)
        return grad_W, grad_b

    # ------------------------------------------------------------------
    # training

    def train_epoch(self, X, y, epoch_index: int = 0) -> float:
        """One seeded-shuffled minibatch pass; returns the pre-update mean loss.

        Deterministic given (params, data order, seed, epoch_index).
        """
        X = check_feature_matrix(X, self.n_features)
        y = check_labels(y, self.n_terms, n_rows=X.shape[0])
        n = X.shape[0]
        if n == 0:
            raise ValueError("train_epoch needs a non-empty labeled set")
        pre_update_loss = self.mean_loss(X, y)

        rng = np.random.default_rng([self.seed, _SHUFFLE_STREAM, epoch_index])
        full_pass = int(np.ceil(n / self.batch_size))
        n_steps = full_pass if self.steps_per_epoch is None else self.steps_per_epoch
        order = rng.permutation(n)
        cursor = 0
        for _ in range(n_steps):
            if cursor >= n:
                order = rng.permutation(n)
                cursor = 0
            batch = order[cursor:cursor + self.batch_size]
            cursor += len(batch)
            grad_W, grad_b = self.gradients(X[batch], y[batch])
            self.W_ -= self.learning_rate * grad_W
            self.b_ -= self.learning_rate * grad_b
        return pre_update_loss

    def fit(self, X, y, epochs: int = 1):
        for epoch in range(epochs):
            self.train_epoch(X, y, epoch_index=epoch)
        return self

    # ------------------------------------------------------------------
    # snapshots and checkpoints

    def snapshot(self) -> "SoftmaxLearner":
        """Independent copy for scoring while the original keeps training."""
        twin = SoftmaxLearner(**self.get_params())
        twin.W_ = self.W_.copy()
        twin.b_ = self.b_.copy()
        return twin

    def to_blob(self) -> dict:
        """Checkpoint: row-major W, then b, then dims."""
        return {
            "W": self.W_.reshape(-1).tolist(),
            "b": self.b_.tolist(),
            "n_terms": self.n_terms,
            "n_features": self.n_features,
        }

    @classmethod
    def from_blob(cls, blob: dict, **hyper) -> "SoftmaxLearner":
        learner = cls(n_features=blob["n_features"], n_terms=blob["n_terms"], **hyper)
        W = np.asarray(blob["W"], dtype=np.float64).reshape(blob["n_terms"], blob["n_features"])
        b = np.asarray(blob["b"], dtype=np.float64)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("checkpoint contains non-finite params")
        learner.W_, learner.b_ = W, b
        return learner

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_blob(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path, **hyper) -> "SoftmaxLearner":
        return cls.from_blob(json.loads(Path(path).read_text(encoding="utf-8")), **hyper)


def spawn_heads(base: SoftmaxLearner, n_heads: int) -> list[SoftmaxLearner]:
    """Fresh zero-init ensemble members sharing the base hyperparameters."""
    if n_heads < 2:
        raise ValueError("an ensemble needs at least 2 heads")
    return [SoftmaxLearner(**base.get_params()) for _ in range(n_heads)]


def train_bootstrap_heads(heads, X, y, epoch_index: int = 0) -> list[float]:
    """Train each head for one epoch on its own seeded bootstrap resample.

    Resamples draw with replacement to the full labeled size, deterministically
    per (seed, head index, epoch index).  Returns per-head pre-update losses.
    """
    if len(heads) < 2:
        raise ValueError("an ensemble needs at least 2 heads")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0:
        raise ValueError("train_bootstrap_heads needs a non-empty labeled set")
    losses = []
    for head_index, head in enumerate(heads):
        rng = np.random.default_rng([head.seed, _BOOTSTRAP_STREAM, head_index, epoch_index])
        resample = rng.integers(0, n, size=n)
        losses.append(head.train_epoch(X[resample], y[resample], epoch_index=epoch_index))
    return losses


def ensemble_distributions(heads, x) -> list[np.ndarray]:
    """Member predictions for one instance, ready for `bald_score`."""
    return [head.predict_proba(np.asarray(x)) for head in heads]
