"""Semantic uncertainty measures over an embedded answer vocabulary.

A prediction is a distribution over a closed term vocabulary whose entries
carry embedding vectors.  Certainty is judged in embedding space: mass
spread over semantically close terms counts as near-certain, mass spread
over distant terms as uncertain.  The headline quantity is the weighted
covariance of the term embeddings under the predicted distribution and its
regularized log-determinant; the divergence gap `delta` summarizes how far
the prediction is from the maximally uncertain (uniform) one.

`delta_definition` and `delta_closed_form` are two independent routes to
the same scalar and are deliberately kept separate; their agreement is a
core correctness check and must never be collapsed into one code path.
All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from .validation import as_float_array, check_distribution, check_matrix, check_symmetric

DEFAULT_EPSILON = 1e-8
DEFAULT_PRECISION = 1.0


@dataclass(frozen=True)
class UncertaintyReport:
    """Per-instance uncertainty summary used by filtration and the service."""

    weighted_variance: float
    logdet_cov: float
    entropy: float
    delta: float
    loss: float

    def to_dict(self) -> dict:
        return {
            "weighted_variance": self.weighted_variance,
            "logdet_cov": self.logdet_cov,
            "entropy": self.entropy,
            "delta": self.delta,
            "loss": self.loss,
        }


def _dist_and_emb(dist, emb) -> tuple[np.ndarray, np.ndarray]:
    vectors = check_matrix(emb, "emb")
    p = check_distribution(dist, n_terms=vectors.shape[0])
    return p, vectors


def weighted_mean(dist, emb) -> np.ndarray:
    """Mean embedding under the predicted distribution."""
    p, vectors = _dist_and_emb(dist, emb)
    return p @ vectors


def weighted_variance(dist, emb) -> float:
    """Expected squared distance of term embeddings from their weighted mean."""
    p, vectors = _dist_and_emb(dist, emb)
    centered = vectors - p @ vectors
    return float(p @ np.sum(centered * centered, axis=1))


def weighted_covariance(dist, emb) -> np.ndarray:
    """Covariance of term embeddings under the predicted distribution (m x m, PSD)."""
    p, vectors = _dist_and_emb(dist, emb)
    centered = vectors - p @ vectors
    cov = (centered * p[:, None]).T @ centered
    return (cov + cov.T) / 2.0


def logdet_cov(cov, epsilon: float = DEFAULT_EPSILON) -> float:
    """Regularized log-determinant, sum of log(eigenvalue + epsilon).

    A prediction supported on fewer points than the embedding dimension has a
    singular covariance; the epsilon ridge keeps the value finite without
    disturbing the certainty ranking.  Non-positive epsilon falls back to the
    default ridge.
    """
    if epsilon <= 0:
        epsilon = DEFAULT_EPSILON
    matrix = check_symmetric(cov, tol=1e-8, name="cov")
    eigenvalues = np.linalg.eigvalsh(matrix)
    shifted = eigenvalues + epsilon
    if np.any(shifted <= 0):
        raise ValueError("covariance is too far from PSD for the given epsilon")
    return float(np.sum(np.log(shifted)))


def delta_closed_form(dist, emb, k: float = DEFAULT_PRECISION) -> float:
    """Divergence gap via the weighted-variance identity.

    (k/2) * weighted_variance - (m/2) * log(k / (2*pi)) - log |C|.
    """
    if k <= 0:
        raise ValueError("precision k must be positive")
    p, vectors = _dist_and_emb(dist, emb)
    n_terms, m = vectors.shape
    centered = vectors - p @ vectors
    wvar = float(p @ np.sum(centered * centered, axis=1))
    return (k / 2.0) * wvar - (m / 2.0) * np.log(k / (2.0 * np.pi)) - np.log(n_terms)


def delta_definition(dist, emb, k: float = DEFAULT_PRECISION) -> float:
    """Divergence gap evaluated from its definition, term by term.

    KL(P || isotropic Gaussian at the weighted mean with precision k, its
    density read off at each term embedding) minus KL(P || uniform over the
    vocabulary).  Zero-probability terms contribute nothing.  Kept
    independent of `delta_closed_form`: the Gaussian log-density comes from
    scipy rather than from any shared algebra.
    """
    if k <= 0:
        raise ValueError("precision k must be positive")
    p, vectors = _dist_and_emb(dist, emb)
    n_terms, m = vectors.shape
    mean = p @ vectors
    gaussian = multivariate_normal(mean=mean, cov=1.0 / k)
    log_density = np.atleast_1d(gaussian.logpdf(vectors))
    support = p > 0
    ps = p[support]
    kl_gaussian = float(np.sum(ps * (np.log(ps) - log_density[support])))
    kl_uniform = float(np.sum(ps * (np.log(ps) + np.log(n_terms))))
    return kl_gaussian - kl_uniform


def entropy(dist) -> float:
    """Shannon entropy in nats with the 0 * log 0 = 0 convention."""
    p = check_distribution(dist)
    support = p[p > 0]
    return float(-np.sum(support * np.log(support)))


def bald_score(ensemble_dists) -> float:
    """Mutual-information disagreement of an ensemble of predictions.

    Entropy of the mean distribution minus the mean entropy of the members;
    non-negative up to floating error.
    """
    members = [check_distribution(d, name="member") for d in ensemble_dists]
    if len(members) < 2:
        raise ValueError("bald_score needs at least 2 ensemble members")
    lengths = {len(d) for d in members}
    if len(lengths) != 1:
        raise ValueError("ensemble members must share a vocabulary")
    stacked = np.stack(members)
    return entropy(stacked.mean(axis=0)) - float(np.mean([entropy(d) for d in members]))


def assess(dist, emb, k: float = DEFAULT_PRECISION,
           epsilon: float = DEFAULT_EPSILON, loss: float = 0.0) -> UncertaintyReport:
    """Bundle every per-instance quantity into one report."""
    return UncertaintyReport(
        weighted_variance=weighted_variance(dist, emb),
        logdet_cov=logdet_cov(weighted_covariance(dist, emb), epsilon),
        entropy=entropy(dist),
        delta=delta_closed_form(dist, emb, k),
        loss=float(loss),
    )


def batch_weighted_variance(probs, emb) -> np.ndarray:
    """Row-wise weighted_variance for a stack of distributions."""
    P = as_float_array(probs, "probs")
    V = check_matrix(emb, "emb")
    means = P @ V
    second = P @ np.sum(V * V, axis=1)
    return second - np.sum(means * means, axis=1)


def batch_logdet_cov(probs, emb, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Row-wise logdet_cov for a stack of distributions.

    Fast path over the per-instance functions; pinned to them by tests.
    """
    if epsilon <= 0:
        epsilon = DEFAULT_EPSILON
    P = as_float_array(probs, "probs")
    V = check_matrix(emb, "emb")
    means = P @ V
    second = np.einsum("nc,ck,cl->nkl", P, V, V, optimize=True)
    covs = second - means[:, :, None] * means[:, None, :]
    covs = (covs + covs.transpose(0, 2, 1)) / 2.0
    eigenvalues = np.linalg.eigvalsh(covs)
    shifted = np.maximum(eigenvalues, 0.0) + epsilon
    return np.sum(np.log(shifted), axis=1)
