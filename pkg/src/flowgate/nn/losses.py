"""Softmax, cross-entropy, and the group-similarity loss.

Both losses return per-sample values and per-sample gradients with
respect to the logits; callers reduce over the batch themselves. The
similarity loss weights the softmax output by a class-similarity matrix
so confusions inside the same provider group are penalized less.
"""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax with max-shift for overflow safety."""
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max-shift."""
    z = np.asarray(logits, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))).squeeze(-1)


def build_sim_matrix(classes: list[str], group_of: dict[str, str],
                     alpha: float) -> np.ndarray:
    """Class-similarity matrix: 1 on the diagonal, alpha within a group."""
    k = len(classes)
    groups = np.array([group_of[c] for c in classes])
    sim = np.where(groups[:, None] == groups[None, :], alpha, 0.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def loss_ce(logits: np.ndarray, labels: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy per sample and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    n = logits.shape[0]
    probs = softmax(logits)
    losses = -np.log(probs[np.arange(n), labels])
    grads = probs.copy()
    grads[np.arange(n), labels] -= 1.0
    return losses, grads


def loss_simloss(logits: np.ndarray, labels: np.ndarray, sim: np.ndarray,
                 temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Similarity-weighted cross-entropy and its gradient.

    Per sample: L = -log( sum_k sim[label, k] * softmax(logits / T)[k] ).
    The gradient is closed-form: dL/dz_j = q_j / T * (1 - sim[label, j] / s)
    where q is the tempered softmax and s the similarity-weighted mass.
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    probs = softmax(logits, temperature)
    weights = sim[labels]  # (N, K)
    mass = (weights * probs).sum(axis=1)
    losses = -np.log(mass)
    grads = probs / temperature * (1.0 - weights / mass[:, None])
    return losses, grads
