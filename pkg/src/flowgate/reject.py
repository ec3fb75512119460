"""Novelty scores and the reject-wrapped classifier.

All three scores follow the same convention: higher means more novel.
The softmax and energy scores are therefore negated; the gradient score
is a norm and already points the right way. A sample is rejected when
its score strictly exceeds the calibrated threshold; ties classify as
known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.losses import build_sim_matrix, logsumexp, loss_simloss, softmax
from .nn.model import Model
from .nn.training import eval_logits

METHODS = ("softmax", "energy", "gradient")

DEFAULT_TEMPERATURE = 3.0
DEFAULT_GRADIENT_P = 1.5
DEFAULT_SIMLOSS_ALPHA = 0.075
DEFAULT_TARGET_FPR = 0.05

MIN_CALIBRATION_SCORES = 20


class UncalibratedError(RuntimeError):
    pass


@dataclass
class RejectConfig:
    method: str = "energy"
    temperature: float = DEFAULT_TEMPERATURE
    gradient_p: float = DEFAULT_GRADIENT_P
    simloss_alpha: float = DEFAULT_SIMLOSS_ALPHA
    target_fpr: float = DEFAULT_TARGET_FPR
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.gradient_p < 1:
            raise ValueError("gradient p-norm must be >= 1")
        if not 0 < self.target_fpr < 1:
            raise ValueError("target FPR must lie in (0, 1)")


@dataclass(frozen=True)
class NoveltyVerdict:
    predicted: str
    score: float
    method: str
    rejected: bool
    threshold_used: float


def score_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Negated maximum of the tempered softmax, per row."""
    probs = softmax(np.atleast_2d(logits), temperature)
    return -probs.max(axis=1)


def score_energy(logits: np.ndarray) -> np.ndarray:
    """Negated log-sum-exp of the raw logits, per row (no temperature)."""
    return -logsumexp(np.atleast_2d(logits))


def score_gradient(logits: np.ndarray, penultimate: np.ndarray,
                   sim: np.ndarray, temperature: float,
                   p: float) -> np.ndarray:
    """Entrywise p-norm of the final-layer weight gradient, per row.

    The predicted class is treated as ground truth and the similarity
    loss is differentiated with respect to the classification layer's
    weight matrix. That gradient is the outer product of the logit
    gradient and the penultimate activation, so its entrywise p-norm
    factorizes into a product of vector p-norms and no parameter is
    ever touched.
    """
    logits = np.atleast_2d(logits)
    penultimate = np.atleast_2d(penultimate)
    predicted = logits.argmax(axis=1)
    _, dlogits = loss_simloss(logits, predicted, sim, temperature)
    g_norm = (np.abs(dlogits) ** p).sum(axis=1) ** (1.0 / p)
    h_norm = (np.abs(penultimate) ** p).sum(axis=1) ** (1.0 / p)
    return g_norm * h_norm


def score_model(model: Model, pstats: np.ndarray, flowstats: np.ndarray,
                config: RejectConfig) -> tuple[np.ndarray, np.ndarray]:
    """Forward a batch and score it; returns (predicted indices, scores)."""
    logits = eval_logits(model.network, pstats, flowstats)
    predicted = logits.argmax(axis=1) if len(logits) else np.zeros(0, dtype=int)
    if config.method == "softmax":
        scores = score_softmax(logits, config.temperature)
    elif config.method == "energy":
        scores = score_energy(logits)
    else:
        # Batched eval keeps only the last chunk's penultimate cache, so
        # recompute it chunk-wise alongside the logits.
        scores = np.empty(len(logits))
        sim = build_sim_matrix(model.classes, model.taxonomy.group_of,
                               config.simloss_alpha)
        chunk = 2048
        for start in range(0, len(pstats), chunk):
            z = model.network.forward(pstats[start:start + chunk],
                                      flowstats[start:start + chunk],
                                      train=False)
            scores[start:start + chunk] = score_gradient(
                z, model.network.penultimate, sim,
                config.temperature, config.gradient_p)
    return predicted, scores


def calibrate_threshold(scores: np.ndarray, target_fpr: float) -> float:
    """(1 - FPR)-quantile of known validation scores, linear interpolation."""
    scores = np.asarray(scores, dtype=float)
    if scores.size < MIN_CALIBRATION_SCORES:
        raise ValueError(
            f"need at least {MIN_CALIBRATION_SCORES} scores, got {scores.size}")
    if not 0 < target_fpr < 1:
        raise ValueError("target FPR must lie in (0, 1)")
    return float(np.quantile(scores, 1.0 - target_fpr))


def predict_with_reject(model: Model, pstats: np.ndarray,
                        flowstats: np.ndarray,
                        config: RejectConfig) -> list[NoveltyVerdict]:
    """Classify a batch, replacing the label decision with a reject bit."""
    if config.threshold is None:
        raise UncalibratedError("reject config has no calibrated threshold")
    predicted, scores = score_model(model, pstats, flowstats, config)
    return [
        NoveltyVerdict(
            predicted=model.classes[cls],
            score=float(score),
            method=config.method,
            rejected=bool(score > config.threshold),
            threshold_used=config.threshold,
        )
        for cls, score in zip(predicted, scores)
    ]
