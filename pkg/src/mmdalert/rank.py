"""Point-wise linear ranking of anomalies and weight fitting from feedback."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import AnomalyVerdict, MMDError, Priority

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankWeights:
    w_d: float = 1.0
    w_p: tuple[float, float, float, float] = (4.0, 3.0, 2.0, 1.0)
    w_g: float = 1.0

    def __post_init__(self):
        w_p = tuple(float(v) for v in self.w_p)
        if len(w_p) != 4:
            raise ValueError("w_p needs one weight per priority level P1..P4")
        object.__setattr__(self, "w_p", w_p)
        object.__setattr__(self, "w_d", float(self.w_d))
        object.__setattr__(self, "w_g", float(self.w_g))
        if not np.all(np.isfinite([self.w_d, self.w_g, *w_p])):
            raise ValueError("weights must be finite")

    def as_vector(self) -> np.ndarray:
        return np.array([self.w_d, *self.w_p, self.w_g])

    @classmethod
    def from_vector(cls, v) -> "RankWeights":
        v = np.asarray(v, dtype=float)
        return cls(v[0], tuple(v[1:5]), v[5])

    def to_dict(self) -> dict:
        return {"w_d": self.w_d, "w_p": list(self.w_p), "w_g": self.w_g}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RankWeights":
        return cls(d["w_d"], tuple(d["w_p"]), d["w_g"])


@dataclass(frozen=True)
class Features:
    f_d: float
    f_p: np.ndarray = field(repr=False)
    f_g: int

    def as_vector(self) -> np.ndarray:
        return np.array([self.f_d, *self.f_p, self.f_g], dtype=float)


@dataclass(frozen=True)
class RankedAlert:
    verdict: AnomalyVerdict
    features: Features
    score: float

    @property
    def f_d(self) -> float:
        return self.features.f_d

    @property
    def f_p(self) -> np.ndarray:
        return self.features.f_p

    @property
    def f_g(self) -> int:
        return self.features.f_g


@dataclass(frozen=True)
class FeedbackRecord:
    f_d: float
    priority: Priority
    f_g: int
    is_valid: bool

    def as_vector(self) -> np.ndarray:
        return np.array([self.f_d, *one_hot(self.priority), self.f_g], dtype=float)


def one_hot(priority) -> np.ndarray:
    v = np.zeros(4)
    v[Priority.parse(priority).value] = 1.0
    return v


def extract_features(verdict: AnomalyVerdict, priority, dimensions) -> Features:
    if not verdict.is_anomaly:
        raise MMDError("features are only defined for anomalous verdicts")
    return Features(float(verdict.severity), one_hot(priority), len(dimensions or ()))


def score(features: Features, weights: RankWeights) -> float:
    return float(weights.w_d * features.f_d
                 + np.dot(np.asarray(weights.w_p), features.f_p)
                 + weights.w_g * features.f_g)


def fit_weights(feedback: Sequence[FeedbackRecord], reg: float = 0.1, *,
                max_iter: int = 50_000, tol: float = 1e-6) -> RankWeights:
    """L2-regularized logistic regression by batch gradient descent.

    Minimizes the mean negative log-likelihood plus ``reg/2 * ||w||^2``. The
    intercept is fitted unpenalized and then dropped, since ranking ignores
    additive constants. Starts from zeros, so results are deterministic.
    """
    if reg < 0:
        raise ValueError("reg must be >= 0")
    if len(feedback) < 10:
        raise MMDError(f"need at least 10 feedback records, got {len(feedback)}")
    X = np.array([r.as_vector() for r in feedback])
    y = np.array([1.0 if r.is_valid else 0.0 for r in feedback])
    if not np.all(np.isfinite(X)):
        raise MMDError("non-finite feature values in feedback")
    if y.min() == y.max():
        raise MMDError("feedback contains a single class; cannot fit a ranking")

    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    # Lipschitz constant of the gradient bounds a safe fixed step
    lip = 0.25 * np.linalg.eigvalsh(A.T @ A / n).max() + reg
    step = 1.0 / lip
    penalty = np.r_[np.full(d, reg), 0.0]
    theta = np.zeros(d + 1)
    for it in range(max_iter):
        z = A @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free sigmoid
        grad = A.T @ (p - y) / n + penalty * theta
        if np.linalg.norm(grad) < tol:
            break
        theta -= step * grad
    else:
        logger.warning("fit_weights: no convergence after %d iterations (|grad|=%.2e)",
                       max_iter, np.linalg.norm(grad))
    return RankWeights.from_vector(theta[:d])
